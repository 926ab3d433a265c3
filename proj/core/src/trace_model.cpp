#include "moesim/trace_model.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "moesim/error.hpp"

namespace moesim {

void ModelShape::validate() const {
  if (num_layers < 1) throw InvalidArgument("num_layers must be >= 1");
  if (experts_per_layer < 1) throw InvalidArgument("experts_per_layer must be >= 1");
  if (top_k < 1 || top_k > experts_per_layer)
    throw InvalidArgument(fmt::format("top_k must lie in [1, {}], got {}", experts_per_layer, top_k));
  if (hidden_dim < 1) throw InvalidArgument("hidden_dim must be >= 1");
  if (expert_size_bytes < 1) throw InvalidArgument("expert_size_bytes must be >= 1");
  if (expert_load_time_ms && !(*expert_load_time_ms > 0.0))
    throw InvalidArgument("expert_load_time_ms must be positive");
}

ModelShape mixtral_8x7b_shape() {
  // 3 x 4096 x 14336 bf16 weights.
  return ModelShape{32, 8, 2, 4096, 352'321'536, std::nullopt};
}

ModelShape qwen15_moe_shape() {
  // 3 x 2048 x 1408 bf16 weights.
  return ModelShape{24, 60, 4, 2048, 17'301'504, std::nullopt};
}

ModelShape phi35_moe_shape() {
  // 3 x 4096 x 6400 bf16 weights.
  return ModelShape{32, 16, 2, 4096, 157'286'400, std::nullopt};
}

ExpertMap::ExpertMap(int num_layers, int num_experts, std::vector<float> probs)
    : layers_(num_layers), experts_(num_experts), probs_(std::move(probs)) {
  if (num_layers < 0 || num_experts < 0 ||
      probs_.size() != static_cast<std::size_t>(num_layers) * static_cast<std::size_t>(num_experts)) {
    throw InvalidArgument(fmt::format("expert map needs {}x{} entries, got {}", num_layers,
                                      num_experts, probs_.size()));
  }
}

ExpertMap ExpertMap::uniform(int num_layers, int num_experts) {
  return ExpertMap(num_layers, num_experts,
                   std::vector<float>(static_cast<std::size_t>(num_layers) * num_experts,
                                      1.0f / static_cast<float>(num_experts)));
}

IterationRecord IterationRecord::from_map(int index, ExpertMap map, int top_k) {
  IterationRecord rec;
  rec.index = index;
  rec.activated.reserve(static_cast<std::size_t>(map.num_layers()));
  for (int l = 0; l < map.num_layers(); ++l) rec.activated.push_back(top_k_indices(map.row(l), top_k));
  rec.map = std::move(map);
  return rec;
}

std::int64_t Workload::total_iterations() const {
  std::int64_t n = 0;
  for (const auto& r : requests) n += static_cast<std::int64_t>(r.iterations.size());
  return n;
}

std::int64_t Workload::total_activations() const {
  return total_iterations() * shape.num_layers * shape.top_k;
}

std::string Violation::to_string() const {
  std::string where = request_id;
  if (iteration >= 0) where += fmt::format(" iteration {}", iteration);
  if (layer >= 0) where += fmt::format(" layer {}", layer);
  return where + ": " + rule;
}

namespace {

void check_row(const RequestTrace& req, int it, int layer, std::span<const float> row,
               std::vector<Violation>& out) {
  double sum = 0.0;
  bool negative = false;
  bool finite = true;
  for (float p : row) {
    if (!std::isfinite(p)) finite = false;
    if (p < 0.0f) negative = true;
    sum += p;
  }
  if (!finite) {
    out.push_back({req.request_id, it, layer, "non-finite probability"});
    return;
  }
  if (negative) out.push_back({req.request_id, it, layer, "negative probability"});
  if (std::abs(sum - 1.0) > kRowSumTolerance) {
    out.push_back({req.request_id, it, layer,
                   fmt::format("row sum {:.6g} outside 1±1e-4", sum)});
  }
}

}  // namespace

std::vector<Violation> validate_trace(const Workload& workload, const ModelShape& shape) {
  std::vector<Violation> out;
  try {
    shape.validate();
  } catch (const InvalidArgument& e) {
    out.push_back({"<shape>", -1, -1, e.what()});
    return out;
  }
  if (!(workload.shape == shape)) out.push_back({"<workload>", -1, -1, "workload shape differs from expected shape"});

  const auto L = shape.num_layers;
  const auto J = shape.experts_per_layer;
  const auto K = shape.top_k;
  std::set<std::string> seen_ids;
  for (const auto& req : workload.requests) {
    if (!seen_ids.insert(req.request_id).second)
      out.push_back({req.request_id, -1, -1, "duplicate request_id"});
    if (static_cast<int>(req.embedding.size()) != shape.hidden_dim) {
      out.push_back({req.request_id, -1, -1,
                     fmt::format("embedding length {} != hidden_dim {}", req.embedding.size(),
                                 shape.hidden_dim)});
    } else {
      double norm2 = 0.0;
      for (float v : req.embedding) norm2 += static_cast<double>(v) * v;
      if (!(norm2 > 0.0) || !std::isfinite(norm2))
        out.push_back({req.request_id, -1, -1, "embedding has zero norm"});
    }
    if (req.iterations.empty()) out.push_back({req.request_id, -1, -1, "no iterations"});
    for (std::size_t i = 0; i < req.iterations.size(); ++i) {
      const auto& rec = req.iterations[i];
      const int it = static_cast<int>(i);
      if (rec.index != it)
        out.push_back({req.request_id, it, -1,
                       fmt::format("iteration index {} not consecutive (expected {})", rec.index, it)});
      if (rec.map.num_layers() != L || rec.map.num_experts() != J) {
        out.push_back({req.request_id, it, -1,
                       fmt::format("map shape {}x{} != {}x{}", rec.map.num_layers(),
                                   rec.map.num_experts(), L, J)});
        continue;
      }
      if (static_cast<int>(rec.activated.size()) != L) {
        out.push_back({req.request_id, it, -1, "activated sets missing for some layers"});
      }
      for (int l = 0; l < L; ++l) {
        check_row(req, it, l, rec.map.row(l), out);
        if (l >= static_cast<int>(rec.activated.size())) continue;
        const auto& act = rec.activated[static_cast<std::size_t>(l)];
        if (static_cast<int>(act.size()) != K) {
          out.push_back({req.request_id, it, l,
                         fmt::format("activated set has {} experts, expected {}", act.size(), K)});
          continue;
        }
        auto expect = top_k_indices(rec.map.row(l), K);
        auto got = act;
        std::sort(expect.begin(), expect.end());
        std::sort(got.begin(), got.end());
        if (expect != got) out.push_back({req.request_id, it, l, "activation/top-K mismatch"});
      }
    }
  }
  return out;
}

}  // namespace moesim
