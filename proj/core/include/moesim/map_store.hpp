#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "moesim/similarity.hpp"
#include "moesim/trace_model.hpp"

namespace moesim {

/// One historical iteration: the request embedding plus the iteration's
/// expert map. Norms are cached so batched cosine scoring only needs dot
/// products.
struct StoredContext {
  std::int64_t context_id = -1;  // assigned by the store on insert
  std::vector<float> embedding;
  ExpertMap map;
  std::string source_request;
  int source_iteration = 0;

  double embedding_norm = 0.0;
  // Content hash; contexts of one request share their embedding.
  std::uint64_t embedding_hash = 0;
  // prefix_norm2[l] = squared norm of rows 0..l flattened.
  std::vector<double> prefix_norm2;

  double prefix_norm(int layers) const {
    return layers <= 0 ? 0.0 : std::sqrt(prefix_norm2[static_cast<std::size_t>(layers - 1)]);
  }
};

using ContextPtr = std::shared_ptr<const StoredContext>;

std::uint64_t hash_embedding(std::span<const float> embedding);

/// Cosine of one query embedding against stored embeddings, computed once
/// per distinct stored embedding.
class SemanticCosineCache {
 public:
  SemanticCosineCache(std::span<const float> query, double query_norm) : query_(query), norm_(query_norm) {}
  double operator()(const StoredContext& c);

 private:
  std::span<const float> query_;
  double norm_;
  std::vector<std::tuple<std::uint64_t, const StoredContext*, double>> seen_;
};

/// Builds a context with cached norms. Throws InvalidArgument on a zero-norm
/// embedding.
StoredContext make_context(std::vector<float> embedding, ExpertMap map, std::string source_request = {},
                           int source_iteration = 0);

// Every iteration of every request, in workload order.
std::vector<StoredContext> contexts_from_workload(const Workload& workload);

inline constexpr int kStoreFormatVersion = 1;

struct StoreConfig {
  int capacity = 1024;
  int prefetch_distance = 3;
  ModelShape shape;

  void validate() const;
};

/// Immutable view of the store at one linearization point.
class StoreSnapshot {
 public:
  StoreSnapshot() = default;
  explicit StoreSnapshot(std::vector<ContextPtr> contexts) : contexts_(std::move(contexts)) {}

  std::size_t size() const { return contexts_.size(); }
  bool empty() const { return contexts_.empty(); }
  const StoredContext& at(std::size_t slot) const { return *contexts_[slot]; }
  std::span<const ContextPtr> contexts() const { return contexts_; }

  // Row `slot` of the C x h embedding matrix.
  std::span<const float> embedding(std::size_t slot) const { return contexts_[slot]->embedding; }
  // Slice `slot` of the C x L x J map tensor.
  const ExpertMap& map(std::size_t slot) const { return contexts_[slot]->map; }

 private:
  std::vector<ContextPtr> contexts_;
};

struct Replacement {
  std::size_t batch_index = 0;
  std::int64_t new_context_id = -1;
  std::int64_t replaced_context_id = -1;
  std::size_t slot = 0;
  double redundancy = 0.0;
};

/// RDY(x, y) = (d/L) * cos(embedding) + ((L-d)/L) * cos(full flattened map).
/// Throws EmptyStoreError when the snapshot is empty.
ScoreMatrix redundancy_matrix(std::span<const StoredContext> batch, const StoreSnapshot& store,
                              int prefetch_distance, int num_layers);

/// Capacity-bounded expert map store with redundancy-based deduplication.
///
/// Single writer, many readers: insert_batch() publishes a new immutable
/// snapshot under a mutex and snapshot() returns the latest one.
class MapStore {
 public:
  explicit MapStore(StoreConfig config);

  /// Appends while below capacity. Once full, each new context (in batch
  /// order) replaces its most redundant stored neighbour, ties going to the
  /// lowest context id. Slots written earlier in the same batch are not
  /// candidates, so a batch never overwrites its own members.
  std::vector<Replacement> insert_batch(std::vector<StoredContext> batch);

  std::shared_ptr<const StoreSnapshot> snapshot() const;

  std::size_t size() const;
  const StoreConfig& config() const { return config_; }
  void clear();

  void export_to(const std::filesystem::path& dir) const;
  // Reads contexts written by export_to(); ids are reassigned on insert.
  static std::vector<StoredContext> read_export(const std::filesystem::path& dir, const ModelShape& shape);

 private:
  StoreConfig config_;
  mutable std::mutex mu_;
  std::shared_ptr<const StoreSnapshot> current_;
  std::int64_t next_id_ = 0;
};

}  // namespace moesim
