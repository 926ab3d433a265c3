#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "moesim/event_log.hpp"
#include "moesim/offload_policy.hpp"
#include "moesim/trace_model.hpp"

namespace moesim {

// GB/s (1e9 bytes per second) to bytes per millisecond.
inline constexpr double gbps_to_bytes_per_ms(double gbps) { return gbps * 1e6; }

struct LatencyModel {
  double bandwidth_bytes_per_ms = gbps_to_bytes_per_ms(32.0);
  std::int64_t expert_size_bytes = 352'321'536;
  double per_layer_compute_ms = 1.0;
  double match_latency_ms = 0.5;
  // Fixed T_e, overriding size / bandwidth.
  std::optional<double> expert_load_override_ms;

  static LatencyModel for_shape(const ModelShape& shape, double bandwidth_gbps = 32.0);

  double expert_load_ms() const {
    return expert_load_override_ms ? *expert_load_override_ms
                                   : static_cast<double>(expert_size_bytes) / bandwidth_bytes_per_ms;
  }
  void validate() const;
};

enum class JobKind { prefetch, on_demand };

struct TransferJob {
  JobKind kind = JobKind::prefetch;
  ExpertId target;
  double priority = 0.0;
  double p = 0.0;
  double enqueue_time = 0.0;
  double start_time = -1.0;
  double completion_time = -1.0;
  // Cursor position (step * L + layer) at which the prefetch is useless.
  std::int64_t deadline = INT64_MAX;
  // An access arrived while the job was queued or in flight.
  bool demanded = false;
};

struct CacheConfig {
  int capacity_experts = 0;
  double expert_load_ms = 1.0;
  EvictionRule eviction = EvictionRule::lru;
  bool guided_admission = false;
  bool abort_inflight = false;
};

struct AccessResult {
  bool hit = false;
  // The expert was already being transferred as a prefetch.
  bool late_prefetch = false;
  // When the expert becomes usable; equals the access time on a hit.
  double ready_time = 0.0;
};

/// GPU expert cache plus a single serialized CPU->GPU transfer lane driven by
/// a virtual clock.
///
/// Queue order: on-demand jobs first-in first-out, then prefetches by
/// descending priority, then (layer, expert). The in-flight transfer is not
/// preempted unless abort mode is on, in which case an on-demand arrival sends
/// an in-flight prefetch back to the queue. Eviction happens on transfer
/// completion when the cache is over capacity.
class ExpertCache {
 public:
  ExpertCache(CacheConfig config, int num_layers, int num_experts, EventSink sink = {});

  double now() const { return clock_; }
  const CacheConfig& config() const { return config_; }

  // Processes every transfer start and completion up to `time`.
  void step_to(double time);

  // Position of the inference cursor, step * L + layer.
  void set_cursor(std::int64_t cursor) { cursor_ = cursor; }

  // `p` is stored as the entry's guidance probability for on-demand loads.
  AccessResult access(ExpertId id, double p, double now);

  // Returns false when the job was dropped (resident, in flight, or already
  // queued on demand). A queued duplicate keeps the larger priority.
  bool enqueue_prefetch(ExpertId id, double p, double priority, std::int64_t deadline, double now);

  // Sets p of the layer's resident experts from a guidance row.
  void update_guidance(int layer, std::span<const float> row);

  void pin(ExpertId id);
  void unpin_all();
  void reset_frequencies();

  bool resident(ExpertId id) const { return slots_[index(id)].has_value(); }
  const CacheEntry* entry(ExpertId id) const;
  std::size_t resident_count() const { return resident_list_.size(); }
  std::vector<ExpertId> resident_experts() const;
  std::size_t peak_resident() const { return peak_; }
  bool idle() const { return !in_flight_ && on_demand_.empty() && prefetch_order_.empty(); }
  std::size_t queued_prefetches() const { return prefetch_order_.size(); }
  const std::optional<TransferJob>& in_flight() const { return in_flight_; }

  // Entry that would be evicted now, if any.
  std::optional<ExpertId> victim(double now, std::optional<ExpertId> exclude = std::nullopt) const;

 private:
  struct PrefetchKey {
    double neg_priority;
    ExpertId target;
    friend auto operator<=>(const PrefetchKey&, const PrefetchKey&) = default;
  };

  std::size_t index(ExpertId id) const {
    return static_cast<std::size_t>(id.layer) * static_cast<std::size_t>(num_experts_) +
           static_cast<std::size_t>(id.expert);
  }
  void emit(SimEvent e) const {
    if (sink_) sink_(e);
  }
  void dispatch();
  void complete_in_flight();
  void insert(const TransferJob& job, double time);
  void evict(ExpertId id, double time);
  void abort_in_flight();
  void queue_prefetch(TransferJob job);

  CacheConfig config_;
  int num_layers_;
  int num_experts_;
  EventSink sink_;
  double clock_ = 0.0;
  std::int64_t cursor_ = -1;
  std::uint64_t insert_seq_ = 0;

  std::vector<std::optional<CacheEntry>> slots_;
  std::vector<ExpertId> resident_list_;
  std::vector<std::size_t> resident_pos_;
  std::vector<char> pinned_;
  std::vector<ExpertId> pinned_list_;
  std::size_t peak_ = 0;

  std::optional<TransferJob> in_flight_;
  std::deque<TransferJob> on_demand_;
  std::set<PrefetchKey> prefetch_order_;
  std::map<ExpertId, TransferJob> prefetch_jobs_;
};

}  // namespace moesim
