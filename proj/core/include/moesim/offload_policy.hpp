#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/map_store.hpp"
#include "moesim/report.hpp"
#include "moesim/trace_model.hpp"

namespace moesim {

// Floor applied to p in the eviction priority.
inline constexpr double kProbabilityFloor = 1e-6;

struct ExpertId {
  int layer = 0;
  int expert = 0;
  friend auto operator<=>(const ExpertId&, const ExpertId&) = default;
};

/// delta = clip(1 - score, 0, 1), with score clamped to [-1, 1] first.
double selection_threshold(double score);

/// Greedy descending-probability selection (ties to the lowest index) that
/// stops once the cumulative probability reaches `delta` and at least `k`
/// experts are chosen. Returned in selection order.
std::vector<int> select_prefetch_set(std::span<const float> guidance, double delta, int k);

/// p / (target_layer - current_layer). Throws InvalidArgument unless
/// target_layer > current_layer.
double prefetch_priority(double p, int target_layer, int current_layer);

/// 1 / (max(p, 1e-6) * freq). The largest value is evicted first.
double eviction_priority(double p, double freq);

/// Book-keeping for one resident expert.
struct CacheEntry {
  ExpertId id;
  double freq = 1.0;
  double inserted_at = 0.0;
  std::uint64_t insert_seq = 0;
  double last_used = 0.0;
  // Latest guidance probability for this expert.
  double p = 0.0;
  bool prefetched_unused = false;
};

enum class EvictionRule { lru, lfu, guided };

/// Victim rank under `rule`; the largest rank is evicted, ties going to the
/// entry inserted first.
double eviction_rank(EvictionRule rule, const CacheEntry& entry, double now);

/// Per-layer guidance produced by a policy.
struct Guidance {
  std::vector<float> row;
  double score = 0.0;
  std::int64_t context_id = -1;
};

struct PrefetchItem {
  int expert = 0;
  double p = 0.0;
  double priority = 0.0;
};

/// Prefetch plan for one target layer, merged across the running batch.
struct PolicyDecision {
  int target_layer = 0;
  double issue_time = 0.0;
  std::vector<PrefetchItem> prefetch_set;
  // Elementwise max of the batch's guidance rows.
  std::vector<float> guidance;
};

struct PolicyParams {
  ModelShape shape;
  int prefetch_distance = 3;
};

/// Contract between a policy and the simulator. `slot` identifies a running
/// request within the current batch step. Policies only see the trace rows
/// that the simulator has already revealed.
class OffloadPolicy {
 public:
  explicit OffloadPolicy(PolicyParams params) : params_(std::move(params)) {}
  virtual ~OffloadPolicy() = default;

  virtual std::string_view name() const = 0;
  virtual EvictionRule eviction_rule() const = 0;
  virtual bool prefetches() const { return true; }
  virtual bool uses_store() const { return false; }
  // Refuse a prefetch into a full cache unless the victim ranks above the
  // incoming expert.
  virtual bool guided_admission() const { return false; }
  // Delay between issuing a plan and its prefetches becoming usable.
  virtual double planning_latency_ms(double match_latency_ms) const {
    (void)match_latency_ms;
    return 0.0;
  }

  virtual void on_step_start(std::shared_ptr<const StoreSnapshot> snapshot) { (void)snapshot; }
  virtual void on_iteration_start(int slot, const RequestTrace& request, int iteration) = 0;
  // Guidance for layers 0..d-1, empty when the policy has none.
  virtual std::vector<Guidance> initial_guidance(int slot) = 0;
  virtual void on_layer_observed(int slot, int layer, std::span<const float> row) = 0;
  // Guidance for `target_layer` once layer target_layer - d has been observed.
  virtual std::optional<Guidance> guidance_for(int slot, int target_layer) = 0;
  // Experts to prefetch for one guidance row.
  virtual std::vector<int> select(const Guidance& guidance) const;

  const PolicyParams& params() const { return params_; }

 protected:
  PolicyParams params_;
};

/// Merges per-slot guidance for one target layer into a decision. Each expert
/// keeps its largest p across slots; priority = p / (target - current).
PolicyDecision merge_decision(const OffloadPolicy& policy, std::span<const Guidance> per_slot, int target_layer,
                              int current_layer, double issue_time);

enum class PolicyKind { fmoe, no_prefetch, lru, lfu, speculative, hit_count, belady, exact };

std::string_view policy_name(PolicyKind kind);
// Throws InvalidArgument on an unknown name.
PolicyKind parse_policy(std::string_view name);
bool is_oracle(PolicyKind kind);

// Online policies only; throws InvalidArgument for the oracles.
std::unique_ptr<OffloadPolicy> make_policy(PolicyKind kind, const PolicyParams& params);

/// Offline demand-paging reference on one request sequence (batch size 1):
/// evicts the resident expert whose next use is furthest away.
struct OracleResult {
  RunReport report;
  // Set when capacity is below K, so one layer cannot be served.
  bool infeasible = false;
};

// Flattened access sequence of a workload in simulation order (requests in
// order, iterations, layers, activated experts by index).
std::vector<std::vector<ExpertId>> access_sequence(const Workload& workload);

OracleResult belady_demand_oracle(const Workload& workload, int cache_capacity, double expert_load_ms);

/// Exact minimum on-demand latency over every cache schedule of a tiny
/// instance (demand paging with optional bypass). Throws InstanceTooLarge when
/// L * J > 12 or the workload has more than 6 iterations.
double brute_force_offline_optimal(const Workload& workload, int cache_capacity, double expert_load_ms);

}  // namespace moesim
