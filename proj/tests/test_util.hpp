#pragma once

#include "hemi/fixtures.hpp"
