#include "moesim/matcher.hpp"

#include <fmt/format.h>

#include "moesim/error.hpp"

namespace moesim {

namespace {

std::vector<float> uniform_row(int num_experts) {
  return std::vector<float>(static_cast<std::size_t>(num_experts), 1.0f / static_cast<float>(num_experts));
}

std::vector<float> copy_row(const ExpertMap& map, int layer) {
  const auto r = map.row(layer);
  return {r.begin(), r.end()};
}

}  // namespace

std::size_t best_match(std::span<const double> scores, const StoreSnapshot& store) {
  std::size_t best = 0;
  for (std::size_t y = 1; y < scores.size(); ++y) {
    if (scores[y] > scores[best] ||
        (scores[y] == scores[best] && store.at(y).context_id < store.at(best).context_id))
      best = y;
  }
  return best;
}

ScoreMatrix semantic_scores(std::span<const std::vector<float>> queries, const StoreSnapshot& store) {
  if (store.empty()) throw EmptyStoreError("semantic_scores on an empty store");
  ScoreMatrix m(queries.size(), store.size());
  for (std::size_t x = 0; x < queries.size(); ++x) {
    const std::span<const float> q(queries[x]);
    const double nq = norm(q);
    if (!(nq > 0.0)) throw InvalidArgument(fmt::format("query {} has zero norm", x));
    SemanticCosineCache cosine(q, nq);
    for (std::size_t y = 0; y < store.size(); ++y) m(x, y) = cosine(store.at(y));
  }
  return m;
}

ScoreMatrix trajectory_scores(std::span<const std::vector<float>> prefixes, const StoreSnapshot& store,
                              int prefix_len) {
  if (prefix_len < 1) throw InvalidArgument("trajectory prefix length must be >= 1");
  if (store.empty()) throw EmptyStoreError("trajectory_scores on an empty store");
  const int L = store.at(0).map.num_layers();
  if (prefix_len > L) throw InvalidArgument(fmt::format("prefix length {} exceeds {} layers", prefix_len, L));
  const auto width = static_cast<std::size_t>(prefix_len) * store.at(0).map.num_experts();
  ScoreMatrix m(prefixes.size(), store.size());
  for (std::size_t x = 0; x < prefixes.size(); ++x) {
    if (prefixes[x].size() < width) throw InvalidArgument(fmt::format("query {} prefix is too short", x));
    const std::span<const float> q(prefixes[x].data(), width);
    const double nq = norm(q);
    for (std::size_t y = 0; y < store.size(); ++y) {
      const auto& c = store.at(y);
      const double nc = c.prefix_norm(prefix_len);
      m(x, y) = (nq > 0.0 && nc > 0.0) ? dot(q, c.map.prefix(prefix_len)) / (nq * nc) : 0.0;
    }
  }
  return m;
}

std::vector<MatchResult> match_initial(std::span<const float> embedding, const StoreSnapshot& store, int d,
                                       int num_experts) {
  std::vector<MatchResult> out;
  out.reserve(static_cast<std::size_t>(d));
  if (store.empty()) {
    for (int l = 0; l < d; ++l) out.push_back({uniform_row(num_experts), 0.0, -1});
    return out;
  }
  const std::vector<float> q(embedding.begin(), embedding.end());
  const auto scores = semantic_scores(std::span<const std::vector<float>>(&q, 1), store);
  const auto best = best_match(scores.row(0), store);
  const auto& c = store.at(best);
  const double score = scores(0, best);
  for (int l = 0; l < d && l < c.map.num_layers(); ++l) out.push_back({copy_row(c.map, l), score, c.context_id});
  return out;
}

MatchResult match_layer(std::span<const float> observed_prefix, int observed_layers, const StoreSnapshot& store,
                        int d, int num_layers, int num_experts) {
  const int target = observed_layers - 1 + d;
  if (observed_layers < 1 || target >= num_layers)
    throw InvalidArgument(fmt::format("target layer {} outside [0, {})", target, num_layers));
  if (store.empty()) return {uniform_row(num_experts), 0.0, -1};
  const std::vector<float> q(observed_prefix.begin(), observed_prefix.end());
  const auto scores = trajectory_scores(std::span<const std::vector<float>>(&q, 1), store, observed_layers);
  const auto best = best_match(scores.row(0), store);
  const auto& c = store.at(best);
  return {copy_row(c.map, target), scores(0, best), c.context_id};
}

TrajectoryTracker::TrajectoryTracker(std::shared_ptr<const StoreSnapshot> store, int num_layers, int num_experts)
    : store_(std::move(store)), num_layers_(num_layers), num_experts_(num_experts), dots_(store_->size(), 0.0) {}

void TrajectoryTracker::observe(std::span<const float> row) {
  if (observed_ >= num_layers_) throw InvalidArgument("observed more rows than layers");
  query_norm2_ += dot(row, row);
  for (std::size_t y = 0; y < dots_.size(); ++y) dots_[y] += dot(row, store_->at(y).map.row(observed_));
  ++observed_;
}

std::vector<double> TrajectoryTracker::scores() const {
  std::vector<double> s(dots_.size(), 0.0);
  const double nq = std::sqrt(query_norm2_);
  for (std::size_t y = 0; y < dots_.size(); ++y) {
    const double nc = store_->at(y).prefix_norm(observed_);
    s[y] = (nq > 0.0 && nc > 0.0) ? dots_[y] / (nq * nc) : 0.0;
  }
  return s;
}

MatchResult TrajectoryTracker::match(int d) const {
  const int target = observed_ - 1 + d;
  if (observed_ < 1 || target >= num_layers_)
    throw InvalidArgument(fmt::format("target layer {} outside [0, {})", target, num_layers_));
  if (store_->empty()) return {uniform_row(num_experts_), 0.0, -1};
  const auto s = scores();
  const auto best = best_match(s, *store_);
  const auto& c = store_->at(best);
  return {copy_row(c.map, target), s[best], c.context_id};
}

}  // namespace moesim
