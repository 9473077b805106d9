#include "hemi/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

#include "hemi/rng.hpp"
#include "hemi/sparse_net.hpp"

namespace hemi {

namespace {

constexpr double kLow = 0.05;
constexpr double kSpan = 0.9;

void sort_by_time(std::vector<Sample>& v) {
  std::stable_sort(v.begin(), v.end(), [](const Sample& a, const Sample& b) { return a.timestamp < b.timestamp; });
}

std::vector<Sample> copy_records(const Dataset& d) {
  const auto r = d.records();
  return {r.begin(), r.end()};
}

std::string line_error(std::size_t line, const std::string& what) {
  return "samples csv line " + std::to_string(line) + ": " + what;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<Sample> featurize(const Trace& trace, std::size_t window) {
  const std::size_t s = trace.sources;
  if (s == 0 || window == 0) throw std::invalid_argument("featurize: empty trace layout");
  if (trace.series.size() % s != 0) throw std::invalid_argument("featurize: series is not ticks x sources");
  if (!trace.level.empty() && trace.level.size() != trace.series.size()) {
    throw std::invalid_argument("featurize: level and series differ in length");
  }
  const std::size_t n = trace.ticks();
  if (n < window + 1) {
    throw std::invalid_argument("featurize: trace has " + std::to_string(n) + " ticks, needs at least " +
                                std::to_string(window + 1));
  }
  const std::vector<double>& target_view = trace.level.empty() ? trace.series : trace.level;
  std::vector<Sample> out;
  out.reserve(n - window);
  for (std::size_t end = window; end < n; ++end) {
    Sample smp;
    smp.timestamp = trace.start + static_cast<std::int64_t>(end);
    smp.features.assign(trace.series.begin() + static_cast<std::ptrdiff_t>((end - window) * s),
                        trace.series.begin() + static_cast<std::ptrdiff_t>(end * s));
    smp.target.assign(target_view.begin() + static_cast<std::ptrdiff_t>(end * s),
                      target_view.begin() + static_cast<std::ptrdiff_t>((end + 1) * s));
    smp.best_source = argmax(smp.target);
    out.push_back(std::move(smp));
  }
  return out;
}

Profile Profile::preferring(std::size_t s, double gain, double phase) {
  if (s >= kSources) throw std::invalid_argument("Profile::preferring: source out of range");
  Profile p;
  p.preferred = s;
  p.gain[s] = gain;
  p.phase = phase;
  return p;
}

void Profile::validate() const {
  if (gain.size() != kSources || offset.size() != kSources) {
    throw std::invalid_argument("profile gain/offset must have one entry per source");
  }
  for (double g : gain) {
    if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("profile gain must be finite and > 0");
  }
  for (double o : offset) {
    if (!std::isfinite(o)) throw std::invalid_argument("profile offset must be finite");
  }
  if (!std::isfinite(phase)) throw std::invalid_argument("profile phase must be finite");
  if (preferred && *preferred >= kSources) throw std::invalid_argument("profile preferred source out of range");
}

SplitDataset split(std::vector<Sample> samples) {
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].timestamp < samples[i - 1].timestamp) throw std::invalid_argument("split: samples out of order");
  }
  const std::size_t n = samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  SplitDataset out;
  auto& tr = out.train.mutable_records();
  auto& va = out.validation.mutable_records();
  auto& te = out.test.mutable_records();
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      tr.push_back(std::move(samples[i]));
    } else if (i < n_train + n_val) {
      va.push_back(std::move(samples[i]));
    } else {
      te.push_back(std::move(samples[i]));
    }
  }
  return out;
}

SplitDataset merge(std::span<const SplitDataset> parts) {
  SplitDataset out;
  if (parts.empty()) return out;
  out.p = parts.front().p;
  for (const auto& part : parts) {
    if (part.p != out.p) throw std::invalid_argument("merge: parts have different scaling factors");
    for (const auto& s : part.train.records()) out.train.push_back(s);
    for (const auto& s : part.validation.records()) out.validation.push_back(s);
    for (const auto& s : part.test.records()) out.test.push_back(s);
  }
  sort_by_time(out.train.mutable_records());
  sort_by_time(out.validation.mutable_records());
  sort_by_time(out.test.mutable_records());
  return out;
}

std::vector<Sample> scale(std::span<const Sample> samples, std::size_t p) {
  if (p < 1) throw std::invalid_argument("scale: p must be >= 1");
  std::vector<Sample> out;
  out.reserve(samples.size() * p);
  for (const auto& s : samples) {
    for (std::size_t c = 0; c < p; ++c) {
      Sample copy = s;
      copy.timestamp = s.timestamp * static_cast<std::int64_t>(p) + static_cast<std::int64_t>(c);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

SplitDataset scale(const SplitDataset& data, std::size_t p) {
  SplitDataset out;
  out.p = data.p * p;
  out.train = Dataset(scale(copy_records(data.train), p));
  out.validation = Dataset(scale(copy_records(data.validation), p));
  out.test = Dataset(scale(copy_records(data.test), p));
  return out;
}

WorkloadConfig WorkloadConfig::desk() {
  WorkloadConfig c;
  const std::size_t preferred[] = {0, 3, 6, 1, 4};
  for (std::size_t g = 0; g < 5; ++g) c.profiles.push_back(Profile::preferring(preferred[g], 1.6, 2.0 * g));
  return c;
}

void WorkloadConfig::validate() const {
  if (core_samples < 1) throw std::invalid_argument("workload.core_samples must be >= 1");
  if (samples_per_group < 1) throw std::invalid_argument("workload.samples_per_group must be >= 1");
  if (profiles.empty()) throw std::invalid_argument("workload.profiles must not be empty");
  for (const auto& p : profiles) p.validate();
  if (!(period > 0.0) || !std::isfinite(period)) throw std::invalid_argument("workload.period must be > 0");
  if (!(mean_level > 0.0) || !std::isfinite(mean_level)) throw std::invalid_argument("workload.mean_level must be > 0");
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw std::invalid_argument("workload.amplitude must be >= 0");
  if (!(std::abs(ar) < 1.0)) throw std::invalid_argument("workload.ar must lie in (-1, 1)");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("workload.noise must be >= 0");
  if (!(full_scale > 0.0) || !std::isfinite(full_scale)) throw std::invalid_argument("workload.full_scale must be > 0");
}

Trace base_trace(std::uint64_t seed, std::uint64_t stream, std::size_t ticks, const Profile& profile,
                 const WorkloadConfig& cfg) {
  profile.validate();
  Rng rng = make_rng(seed, stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double stationary = cfg.noise / std::sqrt(1.0 - cfg.ar * cfg.ar);
  std::vector<double> state(kSources);
  for (double& v : state) v = stationary * normal(rng);
  Trace t;
  t.sources = kSources;
  t.series.resize(ticks * kSources);
  const double lo = 0.01 * cfg.full_scale;
  for (std::size_t k = 0; k < ticks; ++k) {
    for (std::size_t s = 0; s < kSources; ++s) {
      state[s] = cfg.ar * state[s] + cfg.noise * normal(rng);
      const double angle = 2.0 * std::numbers::pi * ((static_cast<double>(k) + profile.phase) / cfg.period +
                                                    static_cast<double>(s) / static_cast<double>(kSources));
      const double raw = cfg.mean_level + cfg.amplitude * std::sin(angle) + state[s];
      t.series[k * kSources + s] = std::clamp(profile.gain[s] * raw + profile.offset[s], lo, cfg.full_scale);
    }
  }
  return t;
}

Trace normalize(Trace raw, double full_scale) {
  const std::size_t s = raw.sources;
  const std::size_t n = raw.ticks();
  raw.level.resize(raw.series.size());
  for (std::size_t i = 0; i < raw.series.size(); ++i) {
    raw.level[i] = kLow + kSpan * std::clamp(raw.series[i] / full_scale, 0.0, 1.0);
  }
  for (std::size_t j = 0; j < s; ++j) {
    double lo = raw.series[j];
    double hi = raw.series[j];
    for (std::size_t k = 0; k < n; ++k) {
      lo = std::min(lo, raw.series[k * s + j]);
      hi = std::max(hi, raw.series[k * s + j]);
    }
    if (!(hi > lo)) throw std::invalid_argument("source " + std::to_string(j) + " series is constant");
    for (std::size_t k = 0; k < n; ++k) {
      double& v = raw.series[k * s + j];
      v = kLow + kSpan * (v - lo) / (hi - lo);
    }
  }
  return raw;
}

Workload synthesize(std::uint64_t seed, std::size_t terminals, const WorkloadConfig& cfg) {
  cfg.validate();
  if (terminals < 1) throw std::invalid_argument("synthesize: need at least one terminal");
  Workload w;
  w.core = split(featurize(normalize(base_trace(seed, 0, cfg.core_samples + kWindow, Profile::identity(), cfg),
                                     cfg.full_scale)));
  std::vector<std::vector<SplitDataset>> parts(terminals);
  w.groups.assign(terminals, {});
  for (std::size_t g = 0; g < cfg.profiles.size(); ++g) {
    Trace t = normalize(base_trace(seed, 1 + g, cfg.samples_per_group + kWindow, cfg.profiles[g], cfg),
                        cfg.full_scale);
    t.terminal = g % terminals;
    parts[t.terminal].push_back(split(featurize(t)));
    w.groups[t.terminal].push_back(g);
  }
  for (auto& p : parts) w.terminals.push_back(merge(p));
  return w;
}

double accuracy(std::span<const ServedResponse> responses, std::span<const std::size_t> truth, double limit) {
  if (responses.empty()) throw std::invalid_argument("accuracy: no responses");
  if (responses.size() != truth.size()) throw std::invalid_argument("accuracy: responses and truth differ in length");
  if (!(limit > 0.0)) throw std::invalid_argument("accuracy: latency limit must be > 0");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (responses[i].source == truth[i] && responses[i].latency <= limit) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(responses.size());
}

void write_samples_csv(std::ostream& out, std::span<const Sample> samples) {
  const std::size_t nf = samples.empty() ? kFeatures : samples.front().features.size();
  const std::size_t nt = samples.empty() ? kSources : samples.front().target.size();
  out << "timestamp";
  for (std::size_t i = 0; i < nf; ++i) out << ",f" << i;
  for (std::size_t i = 0; i < nt; ++i) out << ",t" << i;
  out << ",best_source\n";
  char buf[32];
  for (const auto& s : samples) {
    if (s.features.size() != nf || s.target.size() != nt) {
      throw std::invalid_argument("write_samples_csv: samples differ in width");
    }
    out << s.timestamp;
    for (double v : s.features) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    for (double v : s.target) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << ',' << s.best_source << '\n';
  }
}

std::vector<Sample> read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(line_error(1, "missing header"));
  const auto header = split_fields(line);
  std::size_t nf = 0;
  std::size_t nt = 0;
  for (const auto& h : header) {
    if (!h.empty() && h[0] == 'f') ++nf;
    if (!h.empty() && h[0] == 't' && h != "timestamp") ++nt;
  }
  if (header.size() != nf + nt + 2 || header.front() != "timestamp" || header.back() != "best_source") {
    throw std::invalid_argument(line_error(1, "unexpected header"));
  }
  std::vector<Sample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) throw std::invalid_argument(line_error(lineno, "wrong field count"));
    Sample s;
    auto parse_int = [&](const std::string& f, auto& dst) {
      const auto r = std::from_chars(f.data(), f.data() + f.size(), dst);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size()) {
        throw std::invalid_argument(line_error(lineno, "bad integer '" + f + "'"));
      }
    };
    auto parse_real = [&](const std::string& f) {
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size()) {
        throw std::invalid_argument(line_error(lineno, "bad number '" + f + "'"));
      }
      return v;
    };
    parse_int(fields[0], s.timestamp);
    for (std::size_t i = 0; i < nf; ++i) s.features.push_back(parse_real(fields[1 + i]));
    for (std::size_t i = 0; i < nt; ++i) s.target.push_back(parse_real(fields[1 + nf + i]));
    parse_int(fields.back(), s.best_source);
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t sample_wire_bytes(std::size_t features, std::size_t targets) { return 8 * (features + targets) + 8; }

}  // namespace hemi
