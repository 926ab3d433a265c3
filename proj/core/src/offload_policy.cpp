#include "moesim/offload_policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "moesim/error.hpp"

namespace moesim {

double selection_threshold(double score) {
  const double s = std::clamp(score, -1.0, 1.0);
  return std::clamp(1.0 - s, 0.0, 1.0);
}

std::vector<int> select_prefetch_set(std::span<const float> guidance, double delta, int k) {
  const int J = static_cast<int>(guidance.size());
  const auto order = top_k_indices(guidance, J);
  std::vector<int> out;
  double cumulative = 0.0;
  for (int e : order) {
    if (static_cast<int>(out.size()) >= k && cumulative >= delta - 1e-12) break;
    out.push_back(e);
    cumulative += static_cast<double>(guidance[static_cast<std::size_t>(e)]);
  }
  return out;
}

double prefetch_priority(double p, int target_layer, int current_layer) {
  if (target_layer <= current_layer)
    throw InvalidArgument(fmt::format("prefetch target layer {} not ahead of layer {}", target_layer, current_layer));
  return p / static_cast<double>(target_layer - current_layer);
}

double eviction_priority(double p, double freq) { return 1.0 / (std::max(p, kProbabilityFloor) * freq); }

double eviction_rank(EvictionRule rule, const CacheEntry& entry, double now) {
  switch (rule) {
    case EvictionRule::lru:
      return now - entry.last_used;
    case EvictionRule::lfu:
      return 1.0 / entry.freq;
    case EvictionRule::guided:
      return eviction_priority(entry.p, entry.freq);
  }
  return 0.0;
}

std::vector<int> OffloadPolicy::select(const Guidance& guidance) const {
  return top_k_indices(std::span<const float>(guidance.row), params_.shape.top_k);
}

PolicyDecision merge_decision(const OffloadPolicy& policy, std::span<const Guidance> per_slot, int target_layer,
                              int current_layer, double issue_time) {
  PolicyDecision d;
  d.target_layer = target_layer;
  d.issue_time = issue_time;
  const auto J = static_cast<std::size_t>(policy.params().shape.experts_per_layer);
  d.guidance.assign(J, 0.0f);
  std::vector<double> best(J, -1.0);
  for (const auto& g : per_slot) {
    for (std::size_t j = 0; j < J && j < g.row.size(); ++j) d.guidance[j] = std::max(d.guidance[j], g.row[j]);
    for (int e : policy.select(g)) {
      const auto j = static_cast<std::size_t>(e);
      best[j] = std::max(best[j], static_cast<double>(g.row[j]));
    }
  }
  for (std::size_t j = 0; j < J; ++j) {
    if (best[j] < 0.0) continue;
    d.prefetch_set.push_back({static_cast<int>(j), best[j], prefetch_priority(best[j], target_layer, current_layer)});
  }
  return d;
}

std::string_view policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::fmoe:
      return "fmoe";
    case PolicyKind::no_prefetch:
      return "no_prefetch";
    case PolicyKind::lru:
      return "lru";
    case PolicyKind::lfu:
      return "lfu";
    case PolicyKind::speculative:
      return "speculative";
    case PolicyKind::hit_count:
      return "hit_count";
    case PolicyKind::belady:
      return "belady";
    case PolicyKind::exact:
      return "exact";
  }
  return "?";
}

PolicyKind parse_policy(std::string_view name) {
  for (auto k : {PolicyKind::fmoe, PolicyKind::no_prefetch, PolicyKind::lru, PolicyKind::lfu,
                 PolicyKind::speculative, PolicyKind::hit_count, PolicyKind::belady, PolicyKind::exact})
    if (policy_name(k) == name) return k;
  if (name == "request_hit_count") return PolicyKind::hit_count;
  throw InvalidArgument(fmt::format("unknown policy '{}'", name));
}

bool is_oracle(PolicyKind kind) { return kind == PolicyKind::belady || kind == PolicyKind::exact; }

}  // namespace moesim
