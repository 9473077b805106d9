#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "hemi/hemisphere.hpp"
#include "hemi/pretrain.hpp"
#include "hemi/workload.hpp"

namespace hemi {

/// Star graph: the core plus one link per terminal.
struct WanTopology {
  std::vector<double> distance;  // ed_i per terminal link
  double delay_lo = 0.05;        // seconds per leg
  double delay_hi = 0.15;

  static WanTopology star(std::size_t terminals, double distance = 1.0, double lo = 0.05, double hi = 0.15);
  std::size_t terminals() const { return distance.size(); }
  double sample_leg(Rng& rng) const;
  void validate() const;
  friend bool operator==(const WanTopology&, const WanTopology&) = default;
};

enum class MessageKind : std::uint8_t { param_download, param_upload, raw_data, label_summary };
enum class LinkDirection : std::uint8_t { to_terminal, to_core };

const char* to_string(MessageKind k);
const char* to_string(LinkDirection d);

struct LedgerEntry {
  std::size_t round = 0;
  std::size_t link = 0;  // terminal id
  LinkDirection direction = LinkDirection::to_terminal;
  MessageKind kind = MessageKind::param_download;
  std::uint64_t bytes = 0;
  double distance = 0.0;
  double time = 0.0;  // simulated arrival, seconds

  friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

/// Append-only message log. Safe for concurrent appends; append_batch orders
/// its entries by (round, link) so output is independent of thread timing.
class CommLedger {
 public:
  CommLedger() = default;
  CommLedger(const CommLedger& other);
  CommLedger& operator=(const CommLedger& other);

  void append(const LedgerEntry& e);
  void append_batch(std::vector<LedgerEntry> batch);

  std::vector<LedgerEntry> entries() const;
  std::size_t size() const;
  /// Running sum of distance * bytes maintained on append.
  double running_cost() const;

  friend bool operator==(const CommLedger& a, const CommLedger& b) { return a.entries() == b.entries(); }

 private:
  mutable std::mutex mu_;
  std::vector<LedgerEntry> entries_;
  double running_ = 0.0;
};

struct LedgerFilter {
  std::optional<MessageKind> kind;
  std::optional<std::size_t> link;
  std::optional<std::size_t> round;
  bool matches(const LedgerEntry& e) const;
};

/// CC = sum of distance * bytes over matching entries.
double comm_cost(const CommLedger& ledger, const LedgerFilter& filter = {});
std::uint64_t ledger_bytes(const CommLedger& ledger, const LedgerFilter& filter = {});

/// Columns: round, link, direction, kind, ed, ef, t.
void write_ledger_csv(std::ostream& out, const CommLedger& ledger);

enum class ResponsePath : std::uint8_t { terminal, core };

/// Terminal path: processing only. Core path: two sampled legs of the
/// terminal's link plus processing.
double sample_latency(ResponsePath path, const WanTopology& topo, Rng& rng, double processing_seconds);

/// Deterministic nominal inference time: one nanosecond per multiply-add of
/// the positive pass.
double nominal_processing_seconds(const SparseNet& net);

struct Architecture {
  std::vector<std::size_t> layers{96, 100, 80, 8};
  std::size_t max_degree = 64;

  std::size_t hidden_layers() const { return layers.size() - 2; }
  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct GlobalModel {
  DualHemisphere pair;               // B_CL, B_CR
  LabelPrior core_prior;             // summary of D_c targets
  std::vector<std::size_t> catalog;  // known best-source classes, ascending

  friend bool operator==(const GlobalModel&, const GlobalModel&) = default;
};

struct CoreInitConfig {
  Architecture arch;
  PruneConfig prune;
  /// Full-cost epochs on D_c after the layer-wise procedure, so the
  /// positive direction of B_CR maps inputs to labels.
  std::size_t right_epochs = 10;
  std::uint64_t seed = 0;
  friend bool operator==(const CoreInitConfig&, const CoreInitConfig&) = default;
};

struct CoreInit {
  GlobalModel global;
  PretrainReport left_report;
  PretrainReport right_report;
  double seconds = 0.0;
};

/// B_CL by the unidirectional procedure and B_CR by the bidirectional one,
/// both on D_c; the catalog holds the best sources present in D_c.
CoreInit core_init(const Dataset& core_data, const HyperParams& hp, const CoreInitConfig& cfg);

/// Each terminal receives decoded copies of B_CL and B_CR. Appends two
/// param-download entries per terminal with the true checkpoint sizes.
std::vector<DualHemisphere> dispatch_init(const GlobalModel& global, const WanTopology& topo, CommLedger& ledger,
                                          Rng& delay_rng, double clock = 0.0);

struct AggregateConfig {
  std::size_t replay = 512;  // generated samples per upload
  friend bool operator==(const AggregateConfig&, const AggregateConfig&) = default;
};

struct AggregateReport {
  std::vector<std::size_t> accepted;
  std::vector<std::size_t> rejected;     // terminal ids whose upload failed to decode or match
  std::vector<std::size_t> new_classes;  // catalog additions
  std::size_t replayed = 0;
};

/// Generative replay into B_CL from every accepted upload, a dual loop on the
/// global pair when a new class appears, and a sample-count-weighted average
/// of the accepted right hemispheres into B_CR. Reads no dataset.
AggregateReport core_aggregate(GlobalModel& global, std::span<const Upload> uploads, const HyperParams& hp,
                               const AggregateConfig& cfg, Rng& rng);

/// Per-sample mean E^t of B_CL on `validation`.
double validation_error(const GlobalModel& global, const Dataset& validation);

/// When validation_error < threshold, overwrites every terminal's left net
/// with B_CL and logs one param-download per terminal.
bool global_sync(const GlobalModel& global, std::vector<DualHemisphere>& terminals, const Dataset& validation,
                 CommLedger& ledger, const WanTopology& topo, double threshold, std::size_t round, Rng& delay_rng,
                 double clock = 0.0, double* error = nullptr);

struct FederationConfig {
  CoreInitConfig core;
  HyperParams hp;
  RoundConfig round;
  AggregateConfig aggregate;
  WanTopology topology = WanTopology::star(5);
  double sync_threshold = 0.1;
  std::size_t round_cap = 3;
  /// terminal_round invocations per federation round before a terminal
  /// gives up uploading for that round.
  std::size_t invocations = 2;
  /// Local left epochs each terminal runs after the final synchronization.
  std::size_t personalize_epochs = 10;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FederationResult {
  GlobalModel global;
  std::vector<DualHemisphere> terminals;
  CommLedger ledger;
  std::vector<RoundMetric> metrics;
  std::vector<AggregateReport> aggregates;
  std::vector<double> sync_errors;
  bool converged = false;
  std::size_t rounds = 0;
  double core_seconds = 0.0;      // pretraining plus aggregation
  double terminal_seconds = 0.0;  // mean over terminals
};

/// Procedure I end to end. `core` reuses a finished core_init for D_c.
FederationResult run_federation(const FederationConfig& cfg, const Workload& workload,
                                const CoreInit* core = nullptr);

struct BaselineConfig {
  Architecture arch;
  HyperParams hp;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  friend bool operator==(const BaselineConfig&, const BaselineConfig&) = default;
};

struct BaselineResult {
  SparseNet net;
  CommLedger ledger;
  double seconds = 0.0;
};

/// Raw-data entries for every terminal's training split: bytes = samples *
/// sample_wire_bytes().
CommLedger collect_raw(const Workload& workload, const WanTopology& topo, Rng& delay_rng);

/// Central unidirectional net trained with plain backprop on D_c plus all
/// collected training splits.
BaselineResult run_baseline(const BaselineConfig& cfg, const Workload& workload, const WanTopology& topo);

struct Served {
  std::vector<ServedResponse> responses;
  std::vector<std::size_t> truth;
  std::vector<std::size_t> terminal;
};

/// Every terminal answers its own test split locally.
Served serve_terminals(std::span<const DualHemisphere> terminals, const Workload& workload);
/// The central net answers every terminal's test split over the core path.
Served serve_core(const SparseNet& net, const Workload& workload, const WanTopology& topo, Rng& rng);

double served_accuracy(const Served& s, double limit);

}  // namespace hemi
