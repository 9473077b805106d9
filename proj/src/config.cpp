#include "hemi/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

namespace hemi {

using nlohmann::json;

namespace {

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

std::string index(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

// Turns "section.field must ..." or "field must ..." from a validate() into a
// ConfigError rooted at `path`.
[[noreturn]] void rethrow(const std::string& path, const std::invalid_argument& e) {
  const std::string msg = e.what();
  const auto space = msg.find(' ');
  if (space != std::string::npos) {
    std::string token = msg.substr(0, space);
    const auto dot = token.rfind('.');
    if (dot != std::string::npos) token = token.substr(dot + 1);
    const bool ident = !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) {
      return std::isalnum(c) || c == '_';
    });
    if (ident && msg.compare(space + 1, 4, "must") == 0) throw ConfigError(join(path, token), msg.substr(space + 1));
  }
  throw ConfigError(path, msg);
}

template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    rethrow(path, e);
  }
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

std::uint64_t as_uint(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(path, "expected a non-negative integer");
  }
  throw ConfigError(path, "expected an integer");
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

std::optional<double> as_opt_double(const json& v, const std::string& path) {
  if (v.is_null()) return std::nullopt;
  return as_double(v, path);
}

std::vector<double> as_doubles(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_double(v[i], index(path, i)));
  return out;
}

std::vector<std::size_t> as_sizes(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_uint(v[i], index(path, i)));
  return out;
}

// Object reader that rejects unknown keys once every field has been visited.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Section() = default;

  template <class F>
  void field(const std::string& key, F&& read) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) read(*it, join(path_, key));
  }

  void num(const std::string& key, double& dst) {
    field(key, [&](const json& v, const std::string& p) { dst = as_double(v, p); });
  }
  void opt_num(const std::string& key, std::optional<double>& dst) {
    field(key, [&](const json& v, const std::string& p) { dst = as_opt_double(v, p); });
  }
  template <class U>
  void uint(const std::string& key, U& dst) {
    field(key, [&](const json& v, const std::string& p) { dst = static_cast<U>(as_uint(v, p)); });
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

Profile parse_profile(const json& j, const std::string& path) {
  Profile p;
  Section s(j, path);
  s.field("preferred", [&](const json& v, const std::string& f) {
    if (v.is_null()) {
      p.preferred.reset();
    } else {
      p.preferred = as_uint(v, f);
    }
  });
  s.field("gain", [&](const json& v, const std::string& f) { p.gain = as_doubles(v, f); });
  s.field("offset", [&](const json& v, const std::string& f) { p.offset = as_doubles(v, f); });
  s.num("phase", p.phase);
  s.finish();
  return p;
}

json profile_json(const Profile& p) {
  json j;
  j["preferred"] = p.preferred ? json(*p.preferred) : json(nullptr);
  j["gain"] = p.gain;
  j["offset"] = p.offset;
  j["phase"] = p.phase;
  return j;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void ExperimentConfig::validate() const {
  checked("architecture", [&] { arch.validate(); });
  if (arch.layers.front() != kFeatures) {
    throw ConfigError("architecture.layers[0]", "must equal the feature width " + std::to_string(kFeatures));
  }
  if (arch.layers.back() != kSources) {
    throw ConfigError(index("architecture.layers", arch.layers.size() - 1),
                      "must equal the number of sources " + std::to_string(kSources));
  }
  checked("hyperparams", [&] { hp.validate(); });
  if (!(hp.learning_rate > 0.0)) throw ConfigError("hyperparams.learning_rate", "must be > 0");
  checked("prune", [&] { prune.validate(); });

  if (terminals < 1) throw ConfigError("topology.terminals", "must be >= 1");
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (!(distances[i] >= 0.0) || !std::isfinite(distances[i])) {
      throw ConfigError(index("topology.distances", i), "must be finite and >= 0");
    }
  }
  if (!(delay_lo >= 0.0) || !std::isfinite(delay_lo)) throw ConfigError("topology.delay_lo", "must be finite and >= 0");
  if (!(delay_hi >= delay_lo) || !std::isfinite(delay_hi)) throw ConfigError("topology.delay_hi", "must be >= delay_lo");

  for (std::size_t i = 0; i < workload.profiles.size(); ++i) {
    const Profile& p = workload.profiles[i];
    const std::string path = index("workload.profiles", i);
    if (p.preferred && *p.preferred >= kSources) {
      throw ConfigError(path + ".preferred", "must be < " + std::to_string(kSources));
    }
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  }
  checked("workload", [&] { workload.validate(); });

  checked("federation.loop", [&] { round.validate(); });
  if (aggregate.replay < 1) throw ConfigError("federation.replay", "must be >= 1");
  if (std::isnan(sync_threshold)) throw ConfigError("federation.sync_threshold", "must not be NaN");
  if (round_cap < 1) throw ConfigError("federation.round_cap", "must be >= 1");
  if (invocations < 1) throw ConfigError("federation.invocations", "must be >= 1");
  if (threads < 1) throw ConfigError("federation.threads", "must be >= 1");
  if (baseline_epochs < 1) throw ConfigError("baseline.epochs", "must be >= 1");

  if (sweep.terminals.empty()) throw ConfigError("sweeps.terminals", "must not be empty");
  for (std::size_t i = 0; i < sweep.terminals.size(); ++i) {
    if (sweep.terminals[i] < 1) throw ConfigError(index("sweeps.terminals", i), "must be >= 1");
  }
  if (sweep.p.empty()) throw ConfigError("sweeps.p", "must not be empty");
  for (std::size_t i = 0; i < sweep.p.size(); ++i) {
    if (sweep.p[i] < 1) throw ConfigError(index("sweeps.p", i), "must be >= 1");
  }
  if (sweep.latency_limits.empty()) throw ConfigError("sweeps.latency_limits", "must not be empty");
  for (std::size_t i = 0; i < sweep.latency_limits.size(); ++i) {
    if (!(sweep.latency_limits[i] > 0.0)) throw ConfigError(index("sweeps.latency_limits", i), "must be > 0");
  }
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
}

WanTopology ExperimentConfig::topology(std::size_t m) const {
  WanTopology t = WanTopology::star(m, 1.0, delay_lo, delay_hi);
  if (!distances.empty()) {
    for (std::size_t i = 0; i < m; ++i) t.distance[i] = distances[i % distances.size()];
  }
  return t;
}

CoreInitConfig ExperimentConfig::core() const {
  CoreInitConfig c;
  c.arch = arch;
  c.prune = prune;
  c.right_epochs = right_epochs;
  c.seed = seed;
  return c;
}

FederationConfig ExperimentConfig::federation(std::size_t m) const {
  FederationConfig f;
  f.core = core();
  f.hp = hp;
  f.round = round;
  f.aggregate = aggregate;
  f.topology = topology(m);
  f.sync_threshold = sync_threshold;
  f.round_cap = round_cap;
  f.invocations = invocations;
  f.personalize_epochs = personalize_epochs;
  f.threads = threads;
  f.seed = seed;
  return f;
}

BaselineConfig ExperimentConfig::baseline() const {
  BaselineConfig b;
  b.arch = arch;
  b.hp = hp;
  b.epochs = baseline_epochs;
  b.seed = seed;
  return b;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.uint("seed", c.seed);
  root.field("architecture", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.field("layers", [&](const json& l, const std::string& p) { c.arch.layers = as_sizes(l, p); });
    s.uint("max_degree", c.arch.max_degree);
    s.finish();
  });
  root.field("hyperparams", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.num("learning_rate", c.hp.learning_rate);
    s.num("lasso", c.hp.lasso);
    s.num("ridge", c.hp.ridge);
    s.uint("batch_size", c.hp.batch_size);
    s.finish();
  });
  root.field("prune", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.opt_num("threshold", c.prune.threshold);
    s.num("threshold_scale", c.prune.threshold_scale);
    s.uint("epochs_per_pass", c.prune.epochs_per_pass);
    s.uint("max_epochs", c.prune.max_epochs);
    s.uint("prune_batch", c.prune.prune_batch);
    s.finish();
  });
  root.field("topology", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.uint("terminals", c.terminals);
    s.field("distances", [&](const json& d, const std::string& p) { c.distances = as_doubles(d, p); });
    s.num("delay_lo", c.delay_lo);
    s.num("delay_hi", c.delay_hi);
    s.finish();
  });
  root.field("workload", [&](const json& v, const std::string& path) {
    Section s(v, path);
    WorkloadConfig& w = c.workload;
    s.uint("core_samples", w.core_samples);
    s.uint("samples_per_group", w.samples_per_group);
    s.num("period", w.period);
    s.num("mean_level", w.mean_level);
    s.num("amplitude", w.amplitude);
    s.num("ar", w.ar);
    s.num("noise", w.noise);
    s.num("full_scale", w.full_scale);
    s.field("profiles", [&](const json& ps, const std::string& p) {
      if (!ps.is_array()) throw ConfigError(p, "expected an array");
      w.profiles.clear();
      for (std::size_t i = 0; i < ps.size(); ++i) w.profiles.push_back(parse_profile(ps[i], index(p, i)));
    });
    s.finish();
  });
  root.field("federation", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.num("sync_threshold", c.sync_threshold);
    s.uint("round_cap", c.round_cap);
    s.uint("invocations", c.invocations);
    s.uint("personalize_epochs", c.personalize_epochs);
    s.uint("right_epochs", c.right_epochs);
    s.uint("threads", c.threads);
    s.uint("replay", c.aggregate.replay);
    s.field("loop", [&](const json& l, const std::string& lp) {
      Section ls(l, lp);
      ls.opt_num("threshold", c.round.threshold);
      ls.num("plateau_factor", c.round.plateau_factor);
      ls.uint("window", c.round.window);
      ls.uint("epoch_cap", c.round.epoch_cap);
      ls.uint("loop_batch", c.round.loop_batch);
      ls.finish();
    });
    s.finish();
  });
  root.field("baseline", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.uint("epochs", c.baseline_epochs);
    s.finish();
  });
  root.field("sweeps", [&](const json& v, const std::string& path) {
    Section s(v, path);
    s.field("terminals", [&](const json& a, const std::string& p) { c.sweep.terminals = as_sizes(a, p); });
    s.field("p", [&](const json& a, const std::string& p) { c.sweep.p = as_sizes(a, p); });
    s.field("latency_limits", [&](const json& a, const std::string& p) { c.sweep.latency_limits = as_doubles(a, p); });
    s.finish();
  });
  root.field("output_dir", [&](const json& v, const std::string& p) { c.output_dir = as_string(v, p); });
  root.finish();
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["architecture"] = {{"layers", c.arch.layers}, {"max_degree", c.arch.max_degree}};
  j["hyperparams"] = {{"learning_rate", c.hp.learning_rate},
                      {"lasso", c.hp.lasso},
                      {"ridge", c.hp.ridge},
                      {"batch_size", c.hp.batch_size}};
  j["prune"] = {{"threshold", opt_json(c.prune.threshold)},
                {"threshold_scale", c.prune.threshold_scale},
                {"epochs_per_pass", c.prune.epochs_per_pass},
                {"max_epochs", c.prune.max_epochs},
                {"prune_batch", c.prune.prune_batch}};
  j["topology"] = {{"terminals", c.terminals},
                   {"distances", c.distances},
                   {"delay_lo", c.delay_lo},
                   {"delay_hi", c.delay_hi}};
  json profiles = json::array();
  for (const auto& p : c.workload.profiles) profiles.push_back(profile_json(p));
  j["workload"] = {{"core_samples", c.workload.core_samples},
                   {"samples_per_group", c.workload.samples_per_group},
                   {"period", c.workload.period},
                   {"mean_level", c.workload.mean_level},
                   {"amplitude", c.workload.amplitude},
                   {"ar", c.workload.ar},
                   {"noise", c.workload.noise},
                   {"full_scale", c.workload.full_scale},
                   {"profiles", profiles}};
  j["federation"] = {{"sync_threshold", c.sync_threshold},
                     {"round_cap", c.round_cap},
                     {"invocations", c.invocations},
                     {"personalize_epochs", c.personalize_epochs},
                     {"right_epochs", c.right_epochs},
                     {"threads", c.threads},
                     {"replay", c.aggregate.replay},
                     {"loop",
                      {{"threshold", opt_json(c.round.threshold)},
                       {"plateau_factor", c.round.plateau_factor},
                       {"window", c.round.window},
                       {"epoch_cap", c.round.epoch_cap},
                       {"loop_batch", c.round.loop_batch}}}};
  j["baseline"] = {{"epochs", c.baseline_epochs}};
  j["sweeps"] = {{"terminals", c.sweep.terminals},
                 {"p", c.sweep.p},
                 {"latency_limits", c.sweep.latency_limits}};
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

void apply_env_overrides(ExperimentConfig& cfg, const std::function<const char*(const char*)>& getenv_fn) {
  if (const char* s = getenv_fn("HEMI_SEED"); s && *s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (*s == '-') throw std::invalid_argument("negative");
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("HEMI_SEED", "expected a non-negative integer, got '" + std::string(s) + "'");
    }
    if (used != std::string(s).size()) {
      throw ConfigError("HEMI_SEED", "expected a non-negative integer, got '" + std::string(s) + "'");
    }
    cfg.seed = v;
  }
  if (const char* o = getenv_fn("HEMI_OUT"); o && *o) cfg.output_dir = o;
}

}  // namespace hemi
