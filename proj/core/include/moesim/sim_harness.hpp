#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moesim/cache_sim.hpp"
#include "moesim/event_log.hpp"
#include "moesim/map_store.hpp"
#include "moesim/offload_policy.hpp"
#include "moesim/report.hpp"
#include "moesim/trace_model.hpp"

namespace moesim {

enum class FreqScope { request, global };

struct RunConfig {
  ModelShape shape;
  PolicyKind policy = PolicyKind::fmoe;
  int store_capacity = 1024;
  int prefetch_distance = 3;
  LatencyModel latency;
  int cache_capacity_experts = 0;
  int batch_size = 1;
  FreqScope freq_scope = FreqScope::request;
  bool abort_inflight = false;
  // Start with an empty store even when warm contexts are given.
  bool cold_store = false;
  // Demand loads only, for any policy.
  bool disable_prefetch = false;
  // Gate request starts on their arrival timestamps.
  bool use_arrivals = false;
  // Preloaded into the store before the run.
  std::shared_ptr<const std::vector<StoredContext>> warm_contexts;
  bool record_events = false;
  std::uint64_t seed = 1;

  // Defaults for a model: latency from its expert size, cache holding every
  // expert.
  static RunConfig for_shape(const ModelShape& shape);
  void validate() const;
};

/// Cache size in experts from an explicit count or a GPU memory budget;
/// defaults to every offloadable expert.
int resolve_cache_capacity(const ModelShape& shape, std::optional<int> experts, std::optional<double> gigabytes);

struct RunResult {
  RunReport report;
  std::vector<SimEvent> events;
  // Arrival-to-completion latency per request, in workload order.
  std::vector<double> request_latency_ms;
  double makespan_ms = 0.0;
  // Mean similarity score of the guidance used for prefetching.
  double mean_match_score = 0.0;
};

/// Runs one workload through matcher, policy and cache. Throws
/// ShapeMismatchError or InvalidArgument when the workload does not validate
/// against config.shape. Oracles are dispatched to their offline solvers.
RunResult run_simulation(const Workload& workload, const RunConfig& config);

struct PolicyDelta {
  std::string policy;
  double hit_rate_delta = 0.0;
  // Relative reduction of total stall against the baseline, in [-inf, 1].
  double stall_reduction = 0.0;
};

struct Comparison {
  std::vector<RunReport> reports;
  std::vector<double> mean_match_scores;
  std::string baseline;
  std::vector<PolicyDelta> deltas;
};

Comparison compare_policies(const Workload& workload, const RunConfig& base, const std::vector<PolicyKind>& policies,
                            std::optional<PolicyKind> baseline = std::nullopt);

enum class SweepDimension { cache_capacity, store_capacity, prefetch_distance, batch_size };

std::string_view sweep_dimension_name(SweepDimension d);
SweepDimension parse_sweep_dimension(std::string_view name);

struct SweepTable {
  SweepDimension dimension = SweepDimension::cache_capacity;
  std::vector<int> values;
  std::vector<Comparison> points;
  // Per policy (order of the comparison), Spearman rho of hit rate against
  // the swept value; NaN when undefined.
  std::vector<double> hit_rate_trend;
  std::vector<double> match_score_trend;
};

SweepTable sweep(const Workload& workload, const RunConfig& base, SweepDimension dimension,
                 const std::vector<int>& values, const std::vector<PolicyKind>& policies);

std::string comparison_to_csv(const Comparison& c);
std::string comparison_to_json(const Comparison& c);
std::string sweep_to_csv(const SweepTable& t);
std::string sweep_to_json(const SweepTable& t);

/// Splits requests into two workloads; `first_fraction` of them (rounded
/// down, at least one when possible) land in the first. Order within each
/// part follows the original workload.
std::pair<Workload, Workload> split_workload(const Workload& workload, double first_fraction, std::uint64_t seed);

/// (latency, cumulative fraction) points of the empirical CDF.
std::vector<std::pair<double, double>> latency_cdf(std::vector<double> latencies);

}  // namespace moesim
