#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "moesim/error.hpp"
#include "moesim/metrics.hpp"
#include "moesim/synthetic.hpp"
#include "oracles.hpp"

using namespace moesim;

namespace {

IterationRecord record(int index, int L, int J, int K, const std::vector<std::vector<int>>& active) {
  std::vector<float> probs(static_cast<std::size_t>(L) * J, 0.0f);
  for (int l = 0; l < L; ++l)
    for (int e : active[static_cast<std::size_t>(l)]) probs[static_cast<std::size_t>(l) * J + e] = 1.0f / K;
  return IterationRecord::from_map(index, ExpertMap(L, J, probs), K);
}

}  // namespace

TEST(Entropy, ClosedForms) {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> onehot{1, 0, 0, 0};
  const std::vector<double> half{0.5, 0.5, 0, 0};
  EXPECT_NEAR(shannon_entropy(uniform), std::log(4.0), 1e-12);
  EXPECT_EQ(shannon_entropy(onehot), 0.0);
  EXPECT_NEAR(shannon_entropy(half), std::log(2.0), 1e-12);
}

TEST(Entropy, RenormalisesAndRejectsBadInput) {
  const std::vector<double> scaled{2, 2, 2, 2};
  EXPECT_NEAR(shannon_entropy(scaled), std::log(4.0), 1e-12);
  const std::vector<double> negative{0.5, -0.1, 0.6};
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(shannon_entropy(negative), InvalidArgument);
  EXPECT_THROW(shannon_entropy(zero), InvalidArgument);
}

TEST(CoarseAggregate, SingleIteration) {
  const std::vector<IterationRecord> its{record(0, 1, 4, 2, {{0, 1}})};
  const auto m = coarse_aggregate(its, 1);
  EXPECT_EQ(std::vector<float>(m.row(0).begin(), m.row(0).end()), (std::vector<float>{0.5f, 0.5f, 0.0f, 0.0f}));
}

TEST(CoarseAggregate, SymmetricCounts) {
  const std::vector<IterationRecord> its{record(0, 1, 4, 2, {{0, 1}}), record(1, 1, 4, 2, {{2, 3}})};
  const auto m = coarse_aggregate(its, 2);
  for (float v : m.row(0)) EXPECT_FLOAT_EQ(v, 0.25f);
  const auto first = coarse_aggregate(its, 1);
  EXPECT_FLOAT_EQ(first.row(0)[2], 0.0f);
  const auto clamped = coarse_aggregate(its, 99);
  EXPECT_EQ(clamped, m);
}

TEST(CoarseAggregate, MatchesTallyOracle) {
  SyntheticConfig cfg;
  cfg.shape.num_layers = 6;
  cfg.shape.experts_per_layer = 8;
  cfg.shape.hidden_dim = 8;
  cfg.num_clusters = 1;
  cfg.requests_per_cluster = 1;
  cfg.min_iterations = cfg.max_iterations = 10;
  cfg.dirichlet_concentration = 1.0;
  const auto w = generate_synthetic(cfg);
  const auto& its = w.requests[0].iterations;
  for (int upto : {1, 4, 10}) {
    const auto m = coarse_aggregate(its, upto);
    for (int l = 0; l < 6; ++l) {
      std::vector<int> counts(8, 0);
      int total = 0;
      for (int i = 0; i < upto; ++i)
        for (int e : its[static_cast<std::size_t>(i)].activated[static_cast<std::size_t>(l)]) {
          ++counts[static_cast<std::size_t>(e)];
          ++total;
        }
      for (int e = 0; e < 8; ++e)
        EXPECT_NEAR(m.row(l)[static_cast<std::size_t>(e)], static_cast<double>(counts[static_cast<std::size_t>(e)]) / total,
                    1e-7);
    }
  }
}

TEST(EntropyProfile, OneHotRowsGiveZeros) {
  ModelShape shape;
  shape.num_layers = 3;
  shape.experts_per_layer = 4;
  shape.top_k = 1;
  shape.hidden_dim = 4;
  std::vector<std::vector<ExpertMap>> maps(2);
  for (auto& r : maps)
    for (int i = 0; i < 3; ++i) {
      std::vector<float> probs(12, 0.0f);
      for (int l = 0; l < 3; ++l) probs[static_cast<std::size_t>(l) * 4 + 1] = 1.0f;
      r.emplace_back(3, 4, probs);
    }
  const auto w = moesim::testing::workload_from_maps(shape, maps);
  for (auto g : {Granularity::fine, Granularity::coarse}) {
    const auto p = entropy_profile(w, g, 0);
    ASSERT_EQ(p.per_layer_mean_entropy.size(), 3u);
    for (double v : p.per_layer_mean_entropy) EXPECT_EQ(v, 0.0);
  }
}

TEST(EntropyProfile, CoarseAtLeastFineOnSyntheticTraces) {
  SyntheticConfig cfg;
  cfg.shape.num_layers = 8;
  cfg.shape.hidden_dim = 16;
  cfg.num_clusters = 2;
  cfg.requests_per_cluster = 3;
  for (double c : {0.05, 0.5, 5.0}) {
    cfg.dirichlet_concentration = c;
    const auto w = generate_synthetic(cfg);
    const auto fine = entropy_profile(w, Granularity::fine, 0);
    const auto coarse = entropy_profile(w, Granularity::coarse, 0);
    for (int l = 0; l < 8; ++l)
      EXPECT_GE(coarse.per_layer_mean_entropy[static_cast<std::size_t>(l)],
                fine.per_layer_mean_entropy[static_cast<std::size_t>(l)] - 1e-9);
  }
}

TEST(ActivationCounts, SumsToActivations) {
  SyntheticConfig cfg;
  cfg.shape.num_layers = 4;
  cfg.shape.hidden_dim = 8;
  cfg.num_clusters = 2;
  cfg.requests_per_cluster = 2;
  const auto w = generate_synthetic(cfg);
  std::int64_t total = 0;
  for (auto c : activation_counts(w, 0)) total += c;
  EXPECT_EQ(total, moesim::testing::tally_activations(w));
}

TEST(Correlation, Pearson) {
  const std::vector<double> xs{1, 2, 3, 4};
  std::vector<double> lin, neg;
  for (double x : xs) {
    lin.push_back(2 * x + 1);
    neg.push_back(-x);
  }
  EXPECT_NEAR(pearson_corr(xs, lin), 1.0, 1e-12);
  EXPECT_NEAR(pearson_corr(xs, neg), -1.0, 1e-12);
  const std::vector<double> ys{1, 3, 2, 4};
  EXPECT_NEAR(pearson_corr(xs, ys), 0.8, 1e-12);
}

TEST(Correlation, Errors) {
  const std::vector<double> xs{1, 2, 3};
  const std::vector<double> flat{5, 5, 5};
  const std::vector<double> shorter{1, 2};
  EXPECT_THROW(pearson_corr(xs, flat), UndefinedCorrelation);
  EXPECT_THROW(pearson_corr(xs, shorter), InvalidArgument);
  EXPECT_THROW(spearman_corr(flat, xs), UndefinedCorrelation);
}

TEST(Correlation, SpearmanUsesAverageRanks) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const std::vector<double> monotone{1, 4, 9, 16, 100};
  EXPECT_NEAR(spearman_corr(xs, monotone), 1.0, 1e-12);
  const std::vector<double> tied{1, 1, 2, 2, 3};
  // Ranks 1.5 1.5 3.5 3.5 5 against 1..5.
  const std::vector<double> ranks{1.5, 1.5, 3.5, 3.5, 5};
  EXPECT_NEAR(spearman_corr(xs, tied), pearson_corr(xs, ranks), 1e-12);
}
