#include <gtest/gtest.h>

#include <random>

#include "moesim/error.hpp"
#include "moesim/offload_policy.hpp"
#include "moesim/sim_harness.hpp"
#include "moesim/synthetic.hpp"
#include "oracles.hpp"

using namespace moesim;

TEST(SelectionThreshold, ClosedForms) {
  EXPECT_EQ(selection_threshold(1.0), 0.0);
  EXPECT_EQ(selection_threshold(-1.0), 1.0);
  EXPECT_NEAR(selection_threshold(0.7), 0.3, 1e-12);
  EXPECT_EQ(selection_threshold(5.0), 0.0);
  EXPECT_EQ(selection_threshold(-5.0), 1.0);
}

TEST(SelectionThreshold, MonotoneNonIncreasing) {
  double prev = 2.0;
  for (int i = 0; i <= 1000; ++i) {
    const double d = selection_threshold(-1.0 + 2.0 * i / 1000.0);
    EXPECT_LE(d, prev);
    prev = d;
  }
}

TEST(SelectPrefetchSet, ClosedForms) {
  const std::vector<float> g{0.4f, 0.3f, 0.2f, 0.1f};
  EXPECT_EQ(select_prefetch_set(g, 0.6, 2), (std::vector<int>{0, 1}));
  const std::vector<float> uniform(8, 0.125f);
  EXPECT_EQ(select_prefetch_set(uniform, 0.0, 2), (std::vector<int>{0, 1}));
  const std::vector<float> half{0.5f, 0.5f, 0.0f, 0.0f};
  EXPECT_EQ(select_prefetch_set(half, 1.0, 2), (std::vector<int>{0, 1}));
  EXPECT_EQ(select_prefetch_set(g, 0.95, 1), (std::vector<int>{0, 1, 2, 3}));
}

TEST(SelectPrefetchSet, MinimalAgainstExhaustiveSearch) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> J(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const int n = J(rng);
    const auto g = moesim::testing::random_row(rng, n, true);
    const int k = std::uniform_int_distribution<int>(1, n)(rng);
    const double delta = u(rng);
    const auto got = select_prefetch_set(g, delta, k);
    const auto best = moesim::testing::exhaustive_min_subset(g, delta, k);
    ASSERT_TRUE(best.has_value());
    EXPECT_EQ(static_cast<int>(got.size()), *best);
  }
}

TEST(PrefetchPriority, ClosedForms) {
  EXPECT_NEAR(prefetch_priority(0.5, 5, 2), 0.5 / 3.0, 1e-12);
  EXPECT_EQ(prefetch_priority(0.9, 4, 3), 0.9);
  EXPECT_LT(prefetch_priority(0.6, 5, 2), prefetch_priority(0.3, 3, 2));
  EXPECT_THROW(prefetch_priority(0.5, 2, 2), InvalidArgument);
  EXPECT_THROW(prefetch_priority(0.5, 1, 2), InvalidArgument);
}

TEST(EvictionPriority, ClosedForms) {
  EXPECT_EQ(eviction_priority(0.25, 4), 1.0);
  EXPECT_NEAR(eviction_priority(0.0, 1), 1e6, 1e-6);
  EXPECT_GT(eviction_priority(0.0, 1), eviction_priority(1e-5, 1));
  EXPECT_GT(eviction_priority(0.1, 1), eviction_priority(0.5, 2));
}

TEST(EvictionRank, Rules) {
  CacheEntry e;
  e.freq = 4;
  e.p = 0.25;
  e.last_used = 3.0;
  EXPECT_EQ(eviction_rank(EvictionRule::lru, e, 10.0), 7.0);
  EXPECT_EQ(eviction_rank(EvictionRule::lfu, e, 10.0), 0.25);
  EXPECT_EQ(eviction_rank(EvictionRule::guided, e, 10.0), 1.0);
}

TEST(PolicyNames, ParseAndOracles) {
  for (auto k : {PolicyKind::fmoe, PolicyKind::no_prefetch, PolicyKind::lru, PolicyKind::lfu, PolicyKind::speculative,
                 PolicyKind::hit_count, PolicyKind::belady, PolicyKind::exact})
    EXPECT_EQ(parse_policy(policy_name(k)), k);
  EXPECT_EQ(parse_policy("request_hit_count"), PolicyKind::hit_count);
  EXPECT_THROW(parse_policy("clairvoyant"), InvalidArgument);
  EXPECT_TRUE(is_oracle(PolicyKind::belady));
  EXPECT_FALSE(is_oracle(PolicyKind::fmoe));
  PolicyParams params;
  EXPECT_THROW(make_policy(PolicyKind::exact, params), InvalidArgument);
}

TEST(MergeDecision, KeepsLargestProbabilityPerExpert) {
  PolicyParams params;
  params.shape.experts_per_layer = 4;
  params.shape.top_k = 2;
  auto policy = make_policy(PolicyKind::lru, params);
  const std::vector<Guidance> g{{{0.5f, 0.3f, 0.1f, 0.1f}, 0.0, -1}, {{0.1f, 0.2f, 0.6f, 0.1f}, 0.0, -1}};
  const auto d = merge_decision(*policy, g, 6, 3, 1.5);
  EXPECT_EQ(d.target_layer, 6);
  EXPECT_EQ(d.issue_time, 1.5);
  ASSERT_EQ(d.prefetch_set.size(), 3u);
  EXPECT_EQ(d.prefetch_set[0].expert, 0);
  EXPECT_FLOAT_EQ(static_cast<float>(d.prefetch_set[1].p), 0.3f);
  EXPECT_NEAR(d.prefetch_set[2].priority, static_cast<double>(0.6f) / 3.0, 1e-12);
  EXPECT_EQ(d.guidance, (std::vector<float>{0.5f, 0.3f, 0.6f, 0.1f}));
}

TEST(Baselines, HitCountStartsUniform) {
  PolicyParams params;
  params.shape.num_layers = 4;
  params.shape.experts_per_layer = 6;
  params.shape.top_k = 2;
  params.prefetch_distance = 1;
  auto policy = make_policy(PolicyKind::hit_count, params);
  RequestTrace req;
  policy->on_iteration_start(0, req, 0);
  const auto init = policy->initial_guidance(0);
  ASSERT_EQ(init.size(), 1u);
  EXPECT_EQ(policy->select(init[0]), (std::vector<int>{0, 1}));
  const auto g = policy->guidance_for(0, 2);
  ASSERT_TRUE(g.has_value());
  EXPECT_EQ(policy->select(*g), (std::vector<int>{0, 1}));
}

TEST(Baselines, HitCountUsesEarlierIterations) {
  PolicyParams params;
  params.shape.num_layers = 1;
  params.shape.experts_per_layer = 4;
  params.shape.top_k = 1;
  params.prefetch_distance = 1;
  RequestTrace req;
  for (int i = 0; i < 3; ++i)
    req.iterations.push_back(IterationRecord::from_map(i, ExpertMap(1, 4, {0.1f, 0.1f, 0.1f, 0.7f}), 1));
  auto policy = make_policy(PolicyKind::hit_count, params);
  policy->on_iteration_start(0, req, 2);
  const auto init = policy->initial_guidance(0);
  EXPECT_EQ(policy->select(init[0]), (std::vector<int>{3}));
}

TEST(Baselines, SpeculativeGuidesFromObservedRow) {
  PolicyParams params;
  params.shape.num_layers = 6;
  params.shape.experts_per_layer = 4;
  params.shape.top_k = 1;
  params.prefetch_distance = 2;
  for (auto kind : {PolicyKind::lru, PolicyKind::lfu, PolicyKind::speculative}) {
    auto policy = make_policy(kind, params);
    policy->on_iteration_start(0, RequestTrace{}, 0);
    EXPECT_TRUE(policy->initial_guidance(0).empty());
    const std::vector<float> row{0.1f, 0.1f, 0.7f, 0.1f};
    policy->on_layer_observed(0, 1, row);
    EXPECT_FALSE(policy->guidance_for(0, 2).has_value());
    const auto g = policy->guidance_for(0, 3);
    ASSERT_TRUE(g.has_value());
    EXPECT_EQ(policy->select(*g), (std::vector<int>{2}));
  }
  EXPECT_EQ(make_policy(PolicyKind::lru, params)->eviction_rule(), EvictionRule::lru);
  EXPECT_EQ(make_policy(PolicyKind::lfu, params)->eviction_rule(), EvictionRule::lfu);
  EXPECT_EQ(make_policy(PolicyKind::speculative, params)->eviction_rule(), EvictionRule::guided);
  EXPECT_FALSE(make_policy(PolicyKind::no_prefetch, params)->prefetches());
  EXPECT_TRUE(make_policy(PolicyKind::fmoe, params)->uses_store());
}

namespace {

ModelShape oracle_shape(int L, int J, int K) {
  ModelShape s;
  s.num_layers = L;
  s.experts_per_layer = J;
  s.top_k = K;
  s.hidden_dim = 4;
  s.expert_load_time_ms = 4.0;
  return s;
}

ExpertMap onehot_layers(int L, int J, std::vector<int> experts) {
  std::vector<float> probs(static_cast<std::size_t>(L) * J, 0.0f);
  for (int l = 0; l < L; ++l) probs[static_cast<std::size_t>(l) * J + experts[static_cast<std::size_t>(l)]] = 1.0f;
  return ExpertMap(L, J, probs);
}

}  // namespace

TEST(BeladyOracle, CompulsoryMissesOnly) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    const auto w = moesim::testing::tiny_workload(rng, 3, 4, 4);
    const auto r = belady_demand_oracle(w, w.shape.offloadable_experts(), 4.0);
    EXPECT_EQ(r.report.misses, moesim::testing::distinct_activated(w));
    EXPECT_EQ(r.report.hits + r.report.misses, moesim::testing::tally_activations(w));
  }
}

TEST(BeladyOracle, AlternatingExpertsWithOneSlot) {
  const auto shape = oracle_shape(1, 2, 1);
  std::vector<ExpertMap> its;
  for (int i = 0; i < 6; ++i) its.push_back(onehot_layers(1, 2, {i % 2}));
  const auto w = moesim::testing::workload_from_maps(shape, {its});
  const auto r = belady_demand_oracle(w, 1, 4.0);
  EXPECT_FALSE(r.infeasible);
  EXPECT_EQ(r.report.misses, 6);
  EXPECT_EQ(r.report.hits, 0);
}

TEST(BeladyOracle, InfeasibleBelowTopK) {
  const auto shape = oracle_shape(1, 4, 2);
  const auto w = moesim::testing::workload_from_maps(shape, {{ExpertMap(1, 4, {0.5f, 0.5f, 0.0f, 0.0f})}});
  EXPECT_TRUE(belady_demand_oracle(w, 1, 4.0).infeasible);
}

TEST(BeladyOracle, MatchesExhaustiveSchedules) {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 60; ++i) {
    SyntheticConfig cfg;
    cfg.shape = oracle_shape(2, 3, 1);
    cfg.num_clusters = 1;
    cfg.requests_per_cluster = 1;
    cfg.min_iterations = cfg.max_iterations = 4;
    cfg.dirichlet_concentration = 0.5;
    cfg.seed = rng();
    const auto w = generate_synthetic(cfg);
    for (int cap = 1; cap <= 3; ++cap) {
      const auto r = belady_demand_oracle(w, cap, 4.0);
      EXPECT_EQ(r.report.misses,
                moesim::testing::exhaustive_demand_paging(moesim::testing::flat_sequence(w), cap))
          << "instance " << i << " capacity " << cap;
    }
  }
}

TEST(BruteForceOracle, ClosedForms) {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 20; ++i) {
    const auto w = moesim::testing::tiny_workload(rng, 3, 4, 4);
    EXPECT_EQ(brute_force_offline_optimal(w, w.shape.offloadable_experts(), 4.0),
              4.0 * static_cast<double>(moesim::testing::distinct_activated(w)));
    EXPECT_EQ(brute_force_offline_optimal(w, 0, 4.0), 4.0 * static_cast<double>(moesim::testing::tally_activations(w)));
  }
}

TEST(BruteForceOracle, MatchesUnmemoisedEnumeration) {
  std::mt19937_64 rng(34);
  for (int i = 0; i < 40; ++i) {
    SyntheticConfig cfg;
    cfg.shape = oracle_shape(2, 3, 1);
    cfg.num_clusters = 1;
    cfg.requests_per_cluster = 1;
    cfg.min_iterations = cfg.max_iterations = 3;
    cfg.dirichlet_concentration = 0.5;
    cfg.seed = rng();
    const auto w = generate_synthetic(cfg);
    for (int cap : {1, 2, 3})
      EXPECT_EQ(brute_force_offline_optimal(w, cap, 4.0),
                4.0 * moesim::testing::dfs_optimal_misses(moesim::testing::flat_sequence(w), cap));
  }
}

TEST(BruteForceOracle, NeverWorseThanBelady) {
  std::mt19937_64 rng(35);
  for (int i = 0; i < 30; ++i) {
    const auto w = moesim::testing::tiny_workload(rng, 3, 4, 4);
    for (int cap = w.shape.top_k; cap <= 4; ++cap)
      EXPECT_LE(brute_force_offline_optimal(w, cap, 4.0), belady_demand_oracle(w, cap, 4.0).report.on_demand_latency_ms(4.0));
  }
}

TEST(BruteForceOracle, RejectsLargeInstances) {
  SyntheticConfig cfg;
  cfg.shape = oracle_shape(4, 4, 1);
  cfg.num_clusters = 1;
  cfg.requests_per_cluster = 1;
  cfg.min_iterations = cfg.max_iterations = 2;
  EXPECT_THROW(brute_force_offline_optimal(generate_synthetic(cfg), 2, 4.0), InstanceTooLarge);
  cfg.shape = oracle_shape(2, 3, 1);
  cfg.min_iterations = cfg.max_iterations = 7;
  EXPECT_THROW(brute_force_offline_optimal(generate_synthetic(cfg), 2, 4.0), InstanceTooLarge);
}
