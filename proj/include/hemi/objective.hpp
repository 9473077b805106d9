#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hemi/dataset.hpp"
#include "hemi/sparse_net.hpp"

namespace hemi {

struct HyperParams {
  double learning_rate = 0.01;  // lambda_0
  double lasso = 1e-5;          // lambda_1, weight of R_1
  double ridge = 9e-5;          // lambda_2, weight of R_2
  std::size_t batch_size = 32;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Which objective a gradient or evaluation targets.
///   training:   E^t = 1/2 sum ||forward(x) - y||^2
///   generation: E^r = 1/2 sum ||generate(forward(x)) - x||^2 (bidirectional only)
///   cost:       E^t + E^r (when bidirectional) + lambda_1 R_1 + lambda_2 R_2
enum class Loss { training, generation, cost };

struct LinkGradient {
  std::vector<double> weight;
  std::vector<double> bias;
  friend bool operator==(const LinkGradient&, const LinkGradient&) = default;
};

/// Partials laid out like the net they belong to.
struct GradientSet {
  std::vector<LinkGradient> forward;
  std::vector<LinkGradient> backward;

  static GradientSet zeros_like(const SparseNet& net);
  GradientSet& operator+=(const GradientSet& other);
  GradientSet& operator*=(double s);
  double max_abs() const;

  friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

double training_error(std::span<const std::vector<double>> predictions,
                      std::span<const std::vector<double>> targets);
double generation_error(std::span<const std::vector<double>> generated,
                        std::span<const std::vector<double>> data);

/// R_q = (sum |theta_i|^q)^(1/q), q >= 1.
double regularizer(std::span<const double> theta, int q);
double regularizer(const SparseNet& net, int q);

/// All live weights followed by biases, forward links first.
std::vector<double> live_parameters(const SparseNet& net);

double cost(double training, double generation, std::span<const double> theta, const HyperParams& hp);
double cost(double training, double generation, const SparseNet& net, const HyperParams& hp);

struct LossTerms {
  double training = 0.0;
  double generation = 0.0;
  double lasso_norm = 0.0;  // R_1
  double ridge_norm = 0.0;  // R_2

  double total(const HyperParams& hp) const {
    return training + generation + hp.lasso * lasso_norm + hp.ridge * ridge_norm;
  }
};

/// Generation is evaluated only for bidirectional nets.
LossTerms loss_terms(const SparseNet& net, std::span<const Sample> batch);
double evaluate(const SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp);

/// Exact partials of the selected objective. The Lasso subgradient uses
/// sign(0) = 0. Deleted weights get 0.
GradientSet backprop(const SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp);

/// Chain rule through the positive direction: accumulates parameter partials
/// into `grads` given dE/d(output) and returns dE/d(input) when requested.
/// Masking is left to the caller (mask_gradient).
std::vector<double> backprop_positive(const SparseNet& net, const Activations& act, std::vector<double> g_out,
                                      GradientSet& grads, bool need_input_grad = true);
/// Same through the negative direction; `gen` comes from generate_trace and
/// `g_in` is dE/d(generated input). Returns dE/d(label) when requested.
std::vector<double> backprop_negative(const SparseNet& net, const Activations& gen, std::vector<double> g_in,
                                      GradientSet& grads, bool need_label_grad = true);
/// Zeroes the partials of deleted weights.
void mask_gradient(GradientSet& grads, const SparseNet& net);

/// Adds lambda_1 sign(theta) + lambda_2 theta / ridge_norm for every live
/// parameter of `net`. ridge_norm is passed in so several nets can share one
/// joint R_2.
void add_regularizer_gradient(GradientSet& grads, const SparseNet& net, const HyperParams& hp, double ridge_norm);

/// Central differences (E(theta + eps) - E(theta - eps)) / (2 eps) for every
/// live parameter. Test oracle; the losses are recomputed independently in
/// extended precision so roundoff stays below the truncation error.
GradientSet fd_gradient(const SparseNet& net, std::span<const Sample> batch, Loss loss, const HyperParams& hp,
                        double eps);
double fd_derivative(const std::function<double(double)>& f, double at, double eps);

/// One shuffled mini-batch pass of gradient descent on `loss`.
void train_epoch(SparseNet& net, std::span<const Sample> data, Loss loss, const HyperParams& hp, Rng& rng);

/// theta_i -= learning_rate * g_i over live parameters; masks untouched.
void sgd_step(SparseNet& net, const GradientSet& grads, double learning_rate);

}  // namespace hemi
