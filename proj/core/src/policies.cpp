#include <unordered_map>

#include <fmt/format.h>

#include "moesim/error.hpp"
#include "moesim/matcher.hpp"
#include "moesim/metrics.hpp"
#include "moesim/offload_policy.hpp"

namespace moesim {

namespace {

Guidance uniform_guidance(int num_experts) {
  return {std::vector<float>(static_cast<std::size_t>(num_experts), 1.0f / static_cast<float>(num_experts)), 0.0, -1};
}

// Map matching with threshold-based selection and guided eviction.
class FmoePolicy final : public OffloadPolicy {
 public:
  using OffloadPolicy::OffloadPolicy;

  std::string_view name() const override { return "fmoe"; }
  EvictionRule eviction_rule() const override { return EvictionRule::guided; }
  bool uses_store() const override { return true; }
  bool guided_admission() const override { return true; }
  double planning_latency_ms(double match_latency_ms) const override { return match_latency_ms; }

  void on_step_start(std::shared_ptr<const StoreSnapshot> snapshot) override { snapshot_ = std::move(snapshot); }

  void on_iteration_start(int slot, const RequestTrace& request, int) override {
    if (!snapshot_) snapshot_ = std::make_shared<const StoreSnapshot>();
    slots_.insert_or_assign(slot, Slot{request.embedding,
                                       TrajectoryTracker(snapshot_, params_.shape.num_layers,
                                                         params_.shape.experts_per_layer)});
  }

  std::vector<Guidance> initial_guidance(int slot) override {
    const auto& s = slots_.at(slot);
    std::vector<Guidance> out;
    for (auto& m : match_initial(s.embedding, *snapshot_, params_.prefetch_distance, params_.shape.experts_per_layer))
      out.push_back({std::move(m.guidance), m.score, m.matched_context_id});
    return out;
  }

  void on_layer_observed(int slot, int, std::span<const float> row) override { slots_.at(slot).tracker.observe(row); }

  std::optional<Guidance> guidance_for(int slot, int target_layer) override {
    const auto& t = slots_.at(slot).tracker;
    if (target_layer != t.observed_layers() - 1 + params_.prefetch_distance || target_layer >= params_.shape.num_layers)
      return std::nullopt;
    auto m = t.match(params_.prefetch_distance);
    return Guidance{std::move(m.guidance), m.score, m.matched_context_id};
  }

  std::vector<int> select(const Guidance& g) const override {
    return select_prefetch_set(g.row, selection_threshold(g.score), params_.shape.top_k);
  }

 private:
  struct Slot {
    std::vector<float> embedding;
    TrajectoryTracker tracker;
  };
  std::shared_ptr<const StoreSnapshot> snapshot_;
  std::unordered_map<int, Slot> slots_;
};

class NoPrefetchPolicy final : public OffloadPolicy {
 public:
  using OffloadPolicy::OffloadPolicy;

  std::string_view name() const override { return "no_prefetch"; }
  EvictionRule eviction_rule() const override { return EvictionRule::lru; }
  bool prefetches() const override { return false; }
  void on_iteration_start(int, const RequestTrace&, int) override {}
  std::vector<Guidance> initial_guidance(int) override { return {}; }
  void on_layer_observed(int, int, std::span<const float>) override {}
  std::optional<Guidance> guidance_for(int, int) override { return std::nullopt; }
};

// Layer l's observed gate distribution guides layer l + d.
class SpeculativePolicy final : public OffloadPolicy {
 public:
  SpeculativePolicy(PolicyParams params, std::string_view name, EvictionRule rule)
      : OffloadPolicy(std::move(params)), name_(name), rule_(rule) {}

  std::string_view name() const override { return name_; }
  EvictionRule eviction_rule() const override { return rule_; }
  void on_iteration_start(int slot, const RequestTrace&, int) override { last_rows_[slot] = {-1, {}}; }
  std::vector<Guidance> initial_guidance(int) override { return {}; }

  void on_layer_observed(int slot, int layer, std::span<const float> row) override {
    last_rows_[slot] = {layer, std::vector<float>(row.begin(), row.end())};
  }

  std::optional<Guidance> guidance_for(int slot, int target_layer) override {
    const auto& [layer, row] = last_rows_.at(slot);
    if (layer < 0 || layer + params_.prefetch_distance != target_layer) return std::nullopt;
    return Guidance{row, 0.0, -1};
  }

 private:
  std::string_view name_;
  EvictionRule rule_;
  std::unordered_map<int, std::pair<int, std::vector<float>>> last_rows_;
};

// Activation counts of the running request's earlier iterations.
class HitCountPolicy final : public OffloadPolicy {
 public:
  using OffloadPolicy::OffloadPolicy;

  std::string_view name() const override { return "hit_count"; }
  EvictionRule eviction_rule() const override { return EvictionRule::lfu; }

  void on_iteration_start(int slot, const RequestTrace& request, int iteration) override {
    if (iteration == 0)
      guides_.insert_or_assign(slot, ExpertMap::uniform(params_.shape.num_layers, params_.shape.experts_per_layer));
    else
      guides_.insert_or_assign(slot, coarse_aggregate(request.iterations, iteration));
  }

  std::vector<Guidance> initial_guidance(int slot) override {
    std::vector<Guidance> out;
    for (int l = 0; l < params_.prefetch_distance; ++l) out.push_back(row_guidance(slot, l));
    return out;
  }

  void on_layer_observed(int, int, std::span<const float>) override {}

  std::optional<Guidance> guidance_for(int slot, int target_layer) override {
    if (target_layer >= params_.shape.num_layers) return std::nullopt;
    return row_guidance(slot, target_layer);
  }

 private:
  Guidance row_guidance(int slot, int layer) const {
    const auto it = guides_.find(slot);
    if (it == guides_.end()) return uniform_guidance(params_.shape.experts_per_layer);
    const auto r = it->second.row(layer);
    return {std::vector<float>(r.begin(), r.end()), 0.0, -1};
  }

  std::unordered_map<int, ExpertMap> guides_;
};

}  // namespace

std::unique_ptr<OffloadPolicy> make_policy(PolicyKind kind, const PolicyParams& params) {
  switch (kind) {
    case PolicyKind::fmoe:
      return std::make_unique<FmoePolicy>(params);
    case PolicyKind::no_prefetch:
      return std::make_unique<NoPrefetchPolicy>(params);
    case PolicyKind::lru:
      return std::make_unique<SpeculativePolicy>(params, "lru", EvictionRule::lru);
    case PolicyKind::lfu:
      return std::make_unique<SpeculativePolicy>(params, "lfu", EvictionRule::lfu);
    case PolicyKind::speculative:
      return std::make_unique<SpeculativePolicy>(params, "speculative", EvictionRule::guided);
    case PolicyKind::hit_count:
      return std::make_unique<HitCountPolicy>(params);
    case PolicyKind::belady:
    case PolicyKind::exact:
      break;
  }
  throw InvalidArgument(fmt::format("'{}' is an offline oracle, not an online policy", policy_name(kind)));
}

}  // namespace moesim
