#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace moesim {

// Tolerance on the row sum of a gate probability vector.
inline constexpr double kRowSumTolerance = 1e-4;

/// Static description of an MoE model as seen by the offloading layer.
struct ModelShape {
  int num_layers = 32;
  int experts_per_layer = 8;
  int top_k = 2;
  int hidden_dim = 4096;
  std::int64_t expert_size_bytes = 352'321'536;
  // Overrides the bandwidth-derived load time when set.
  std::optional<double> expert_load_time_ms;

  int offloadable_experts() const { return num_layers * experts_per_layer; }

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Table shapes of the three evaluated models. Expert sizes are the bf16 size of
// one gated FFN expert (three hidden x intermediate projections).
ModelShape mixtral_8x7b_shape();
ModelShape qwen15_moe_shape();
ModelShape phi35_moe_shape();

/// One iteration's gate output: L probability rows of J entries each.
class ExpertMap {
 public:
  ExpertMap() = default;
  ExpertMap(int num_layers, int num_experts, std::vector<float> probs);

  static ExpertMap uniform(int num_layers, int num_experts);

  int num_layers() const { return layers_; }
  int num_experts() const { return experts_; }
  bool empty() const { return probs_.empty(); }

  std::span<const float> row(int layer) const {
    return {probs_.data() + static_cast<std::size_t>(layer) * experts_,
            static_cast<std::size_t>(experts_)};
  }
  std::span<float> mutable_row(int layer) {
    return {probs_.data() + static_cast<std::size_t>(layer) * experts_,
            static_cast<std::size_t>(experts_)};
  }
  // First `layers` rows, flattened.
  std::span<const float> prefix(int layers) const {
    return {probs_.data(), static_cast<std::size_t>(layers) * experts_};
  }
  std::span<const float> flat() const { return probs_; }

  friend bool operator==(const ExpertMap&, const ExpertMap&) = default;

 private:
  int layers_ = 0;
  int experts_ = 0;
  std::vector<float> probs_;
};

/// Indices of the k largest entries, largest first; equal values resolve to
/// the lower index.
template <typename T>
std::vector<int> top_k_indices(std::span<const T> row, int k) {
  std::vector<int> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto kk = static_cast<std::size_t>(std::clamp<int>(k, 0, static_cast<int>(row.size())));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                    [&](int a, int b) {
                      if (row[a] != row[b]) return row[a] > row[b];
                      return a < b;
                    });
  idx.resize(kk);
  return idx;
}

struct IterationRecord {
  int index = 0;  // 0 is the prefill iteration
  ExpertMap map;
  // activated[l] holds the top-K experts of map.row(l) in selection order.
  std::vector<std::vector<int>> activated;

  static IterationRecord from_map(int index, ExpertMap map, int top_k);

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct RequestTrace {
  std::string request_id;
  std::vector<float> embedding;
  std::vector<IterationRecord> iterations;
  double arrival_time_ms = 0.0;
  // Ground-truth cluster for synthetic traces; -1 when unknown.
  int cluster = -1;

  friend bool operator==(const RequestTrace&, const RequestTrace&) = default;
};

struct Workload {
  ModelShape shape;
  std::vector<RequestTrace> requests;
  // Serialized generator configuration, empty when not synthetic.
  std::string generator_json;

  std::int64_t total_iterations() const;
  std::int64_t total_activations() const;

  friend bool operator==(const Workload&, const Workload&) = default;
};

struct Violation {
  std::string request_id;
  int iteration = -1;  // -1 when the rule is request-level
  int layer = -1;
  std::string rule;

  std::string to_string() const;
};

/// Checks every type invariant of the workload against `shape`. Violations are
/// returned as data; an empty result means the workload is well formed.
std::vector<Violation> validate_trace(const Workload& workload, const ModelShape& shape);

}  // namespace moesim
