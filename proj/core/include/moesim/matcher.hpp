#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "moesim/map_store.hpp"
#include "moesim/similarity.hpp"

namespace moesim {

/// Guidance for one target layer plus the similarity of the context it came
/// from. An empty-store fallback has uniform guidance, score 0 and id -1.
struct MatchResult {
  std::vector<float> guidance;
  double score = 0.0;
  std::int64_t matched_context_id = -1;
};

/// Entry (x, y) is the cosine between query x and stored embedding y.
/// Throws InvalidArgument on a zero-norm query, EmptyStoreError on an empty
/// store.
ScoreMatrix semantic_scores(std::span<const std::vector<float>> queries, const StoreSnapshot& store);

/// Entry (x, y) is the cosine between the first `prefix_len` rows of query x
/// (flattened, prefix_len * J floats) and the same rows of stored map y.
ScoreMatrix trajectory_scores(std::span<const std::vector<float>> prefixes, const StoreSnapshot& store,
                              int prefix_len);

/// Guidance for layers 0..d-1 from the best semantic match.
std::vector<MatchResult> match_initial(std::span<const float> embedding, const StoreSnapshot& store, int d,
                                       int num_experts);

/// Guidance for layer `observed_layers - 1 + d` given the flattened observed
/// rows of layers 0..observed_layers-1.
MatchResult match_layer(std::span<const float> observed_prefix, int observed_layers, const StoreSnapshot& store,
                        int d, int num_layers, int num_experts);

// Index of the maximal score; ties resolve to the lowest context id.
std::size_t best_match(std::span<const double> scores, const StoreSnapshot& store);

/// Incremental trajectory matcher for one running iteration. Each observed
/// row adds one dot product per stored context, so matching every layer of an
/// iteration costs O(C * L * J) instead of O(C * L^2 * J).
class TrajectoryTracker {
 public:
  TrajectoryTracker(std::shared_ptr<const StoreSnapshot> store, int num_layers, int num_experts);

  void observe(std::span<const float> row);
  int observed_layers() const { return observed_; }

  // Same result as match_layer() on the rows observed so far.
  MatchResult match(int d) const;
  std::vector<double> scores() const;

 private:
  std::shared_ptr<const StoreSnapshot> store_;
  int num_layers_;
  int num_experts_;
  int observed_ = 0;
  double query_norm2_ = 0.0;
  std::vector<double> dots_;
};

}  // namespace moesim
