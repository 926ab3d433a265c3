#include "moesim/map_store.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <string_view>
#include <limits>

#include <fmt/format.h>

#include "json.hpp"
#include "json_floats.hpp"
#include "moesim/error.hpp"
#include "shape_json.hpp"

namespace moesim {

using nlohmann::json;
namespace fs = std::filesystem;

StoredContext make_context(std::vector<float> embedding, ExpertMap map, std::string source_request,
                           int source_iteration) {
  StoredContext c;
  c.embedding = std::move(embedding);
  c.embedding_norm = norm(std::span<const float>(c.embedding));
  if (!(c.embedding_norm > 0.0)) throw InvalidArgument("stored context embedding has zero norm");
  c.embedding_hash = hash_embedding(c.embedding);
  c.map = std::move(map);
  c.source_request = std::move(source_request);
  c.source_iteration = source_iteration;
  c.prefix_norm2.resize(static_cast<std::size_t>(c.map.num_layers()));
  double acc = 0.0;
  for (int l = 0; l < c.map.num_layers(); ++l) {
    const auto row = c.map.row(l);
    acc += dot(row, row);
    c.prefix_norm2[static_cast<std::size_t>(l)] = acc;
  }
  return c;
}

std::uint64_t hash_embedding(std::span<const float> embedding) {
  return std::hash<std::string_view>{}(
      std::string_view(reinterpret_cast<const char*>(embedding.data()), embedding.size_bytes()));
}

double SemanticCosineCache::operator()(const StoredContext& c) {
  const std::span<const float> e(c.embedding);
  for (const auto& [h, rep, value] : seen_)
    if (h == c.embedding_hash && rep->embedding.size() == e.size() &&
        std::memcmp(rep->embedding.data(), e.data(), e.size_bytes()) == 0)
      return value;
  const double value = dot(query_, e) / (norm_ * c.embedding_norm);
  seen_.emplace_back(c.embedding_hash, &c, value);
  return value;
}

std::vector<StoredContext> contexts_from_workload(const Workload& workload) {
  std::vector<StoredContext> out;
  out.reserve(static_cast<std::size_t>(workload.total_iterations()));
  for (const auto& req : workload.requests)
    for (const auto& rec : req.iterations) out.push_back(make_context(req.embedding, rec.map, req.request_id, rec.index));
  return out;
}

void StoreConfig::validate() const {
  shape.validate();
  if (capacity < 1) throw InvalidArgument("store capacity must be >= 1");
  if (prefetch_distance < 1 || prefetch_distance >= shape.num_layers)
    throw InvalidArgument(fmt::format("prefetch distance {} outside [1, {})", prefetch_distance, shape.num_layers));
}

namespace {

double redundancy(const StoredContext& x, const StoredContext& y, double sem, double w_sem, double w_map) {
  const int L = x.map.num_layers();
  const double nx = x.prefix_norm(L);
  const double ny = y.prefix_norm(L);
  const double traj = (nx > 0.0 && ny > 0.0) ? dot(x.map.flat(), y.map.flat()) / (nx * ny) : 0.0;
  return w_sem * sem + w_map * traj;
}

StoredContext with_norms(StoredContext c) {
  if (c.prefix_norm2.size() != static_cast<std::size_t>(c.map.num_layers()) || !(c.embedding_norm > 0.0)) {
    auto id = c.context_id;
    c = make_context(std::move(c.embedding), std::move(c.map), std::move(c.source_request), c.source_iteration);
    c.context_id = id;
  }
  return c;
}

}  // namespace

ScoreMatrix redundancy_matrix(std::span<const StoredContext> batch, const StoreSnapshot& store,
                              int prefetch_distance, int num_layers) {
  if (store.empty())
    throw EmptyStoreError("redundancy_matrix on an empty store; insert the batch directly instead");
  const double w_sem = static_cast<double>(prefetch_distance) / num_layers;
  const double w_map = static_cast<double>(num_layers - prefetch_distance) / num_layers;
  ScoreMatrix m(batch.size(), store.size());
  for (std::size_t x = 0; x < batch.size(); ++x) {
    SemanticCosineCache sem(batch[x].embedding, batch[x].embedding_norm);
    for (std::size_t y = 0; y < store.size(); ++y)
      m(x, y) = redundancy(batch[x], store.at(y), sem(store.at(y)), w_sem, w_map);
  }
  return m;
}

MapStore::MapStore(StoreConfig config) : config_(std::move(config)), current_(std::make_shared<StoreSnapshot>()) {
  config_.validate();
}

std::vector<Replacement> MapStore::insert_batch(std::vector<StoredContext> batch) {
  std::lock_guard lock(mu_);
  std::vector<ContextPtr> contexts(current_->contexts().begin(), current_->contexts().end());
  const auto capacity = static_cast<std::size_t>(config_.capacity);
  const int L = config_.shape.num_layers;
  const double w_sem = static_cast<double>(config_.prefetch_distance) / L;
  const double w_map = static_cast<double>(L - config_.prefetch_distance) / L;

  std::vector<Replacement> log;
  std::vector<char> written(capacity, 0);
  std::size_t written_count = 0;
  for (std::size_t x = 0; x < batch.size(); ++x) {
    auto ctx = with_norms(std::move(batch[x]));
    if (ctx.map.num_layers() != L || ctx.map.num_experts() != config_.shape.experts_per_layer)
      throw InvalidArgument("context map shape does not match the store shape");
    ctx.context_id = next_id_++;

    if (contexts.size() < capacity) {
      written[contexts.size()] = 1;
      ++written_count;
      contexts.push_back(std::make_shared<const StoredContext>(std::move(ctx)));
      continue;
    }
    if (written_count == capacity) {
      std::fill(written.begin(), written.end(), 0);
      written_count = 0;
    }
    SemanticCosineCache sem(ctx.embedding, ctx.embedding_norm);
    std::size_t best = capacity;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t y = 0; y < contexts.size(); ++y) {
      if (written[y]) continue;
      const double s = redundancy(ctx, *contexts[y], sem(*contexts[y]), w_sem, w_map);
      if (s > best_score || (s == best_score && contexts[y]->context_id < contexts[best]->context_id)) {
        best = y;
        best_score = s;
      }
    }
    log.push_back({x, ctx.context_id, contexts[best]->context_id, best, best_score});
    written[best] = 1;
    ++written_count;
    contexts[best] = std::make_shared<const StoredContext>(std::move(ctx));
  }
  current_ = std::make_shared<const StoreSnapshot>(std::move(contexts));
  return log;
}

std::shared_ptr<const StoreSnapshot> MapStore::snapshot() const {
  std::lock_guard lock(mu_);
  return current_;
}

std::size_t MapStore::size() const {
  std::lock_guard lock(mu_);
  return current_->size();
}

void MapStore::clear() {
  std::lock_guard lock(mu_);
  current_ = std::make_shared<const StoreSnapshot>();
}

void MapStore::export_to(const fs::path& dir) const {
  const auto snap = snapshot();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory");
  json meta;
  meta["format_version"] = kStoreFormatVersion;
  meta["shape"] = detail::shape_to_json(config_.shape);
  meta["capacity"] = config_.capacity;
  meta["prefetch_distance"] = config_.prefetch_distance;
  meta["num_contexts"] = snap->size();
  {
    std::ofstream f(dir / "meta.json");
    if (!f) throw IoError((dir / "meta.json").string(), "cannot open for writing");
    f << meta.dump(2) << '\n';
  }
  std::ofstream f(dir / "contexts.jsonl");
  if (!f) throw IoError((dir / "contexts.jsonl").string(), "cannot open for writing");
  const int L = config_.shape.num_layers;
  for (const auto& c : snap->contexts()) {
    std::string line = fmt::format("{{\"context_id\":{},\"request_id\":{},\"iteration\":{},\"embedding\":",
                                   c->context_id, json(c->source_request).dump(), c->source_iteration);
    detail::append_float_array(line, c->embedding);
    line += ",\"map\":[";
    for (int l = 0; l < L; ++l) {
      if (l) line.push_back(',');
      detail::append_float_array(line, c->map.row(l));
    }
    line += "]}";
    f << line << '\n';
  }
  if (!f) throw IoError((dir / "contexts.jsonl").string(), "write failed");
}

std::vector<StoredContext> MapStore::read_export(const fs::path& dir, const ModelShape& shape) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw IoError((dir / "meta.json").string(), "cannot open");
  json meta;
  try {
    meta = json::parse(mf);
  } catch (const json::exception& e) {
    throw TraceParseError(e.what(), 0, 0, "");
  }
  const auto stored_shape = detail::shape_from_json(meta.at("shape"));
  if (stored_shape.num_layers != shape.num_layers || stored_shape.experts_per_layer != shape.experts_per_layer ||
      stored_shape.hidden_dim != shape.hidden_dim)
    throw ShapeMismatchError("store export shape does not match the model shape", "", -1, -1);

  std::ifstream f(dir / "contexts.jsonl");
  if (!f) throw IoError((dir / "contexts.jsonl").string(), "cannot open");
  std::vector<StoredContext> out;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t offset = 0;
  std::string last = "<none>";
  const int L = shape.num_layers;
  const int J = shape.experts_per_layer;
  while (std::getline(f, line)) {
    ++line_no;
    const auto line_offset = offset;
    offset += static_cast<std::int64_t>(line.size()) + 1;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      std::vector<float> probs;
      probs.reserve(static_cast<std::size_t>(L) * J);
      const auto& rows = j.at("map");
      if (static_cast<int>(rows.size()) != L) throw ShapeMismatchError("context map has wrong layer count", "", -1, -1);
      for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != J) throw ShapeMismatchError("context row has wrong width", "", -1, -1);
        for (const auto& v : row) probs.push_back(static_cast<float>(v.get<double>()));
      }
      auto ctx = make_context(detail::read_float_array(j.at("embedding")), ExpertMap(L, J, std::move(probs)),
                              j.value("request_id", std::string()), j.value("iteration", 0));
      last = std::to_string(j.value("context_id", std::int64_t{-1}));
      out.push_back(std::move(ctx));
    } catch (const json::exception& e) {
      throw TraceParseError(fmt::format("contexts.jsonl:{}: {}; last complete record: {}", line_no, e.what(), last),
                            line_no, line_offset, last);
    }
  }
  return out;
}

}  // namespace moesim
