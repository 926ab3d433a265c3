#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "moesim/synthetic.hpp"

namespace moesim::testing {

std::optional<int> exhaustive_min_subset(std::span<const float> guidance, double delta, int k) {
  const int n = static_cast<int>(guidance.size());
  std::optional<int> best;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    int count = 0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        ++count;
        sum += static_cast<double>(guidance[static_cast<std::size_t>(i)]);
      }
    if (count >= k && sum >= delta - 1e-12 && (!best || count < *best)) best = count;
  }
  return best;
}

double naive_cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<std::vector<double>> naive_semantic(const std::vector<std::vector<float>>& queries,
                                                const StoreSnapshot& store) {
  std::vector<std::vector<double>> out;
  for (const auto& q : queries) {
    std::vector<double> row;
    for (std::size_t y = 0; y < store.size(); ++y) row.push_back(naive_cosine(q, store.at(y).embedding));
    out.push_back(row);
  }
  return out;
}

std::vector<std::vector<double>> naive_trajectory(const std::vector<std::vector<float>>& prefixes,
                                                  const StoreSnapshot& store, int prefix_len) {
  std::vector<std::vector<double>> out;
  for (const auto& q : prefixes) {
    std::vector<double> row;
    for (std::size_t y = 0; y < store.size(); ++y) {
      const auto& m = store.at(y).map;
      std::vector<float> stored;
      for (int l = 0; l < prefix_len; ++l)
        for (float v : m.row(l)) stored.push_back(v);
      row.push_back(naive_cosine(std::span<const float>(q.data(), stored.size()), stored));
    }
    out.push_back(row);
  }
  return out;
}

double naive_redundancy(const StoredContext& x, const StoredContext& y, int d, int num_layers) {
  const double wd = static_cast<double>(d) / num_layers;
  return wd * naive_cosine(x.embedding, y.embedding) + (1.0 - wd) * naive_cosine(x.map.flat(), y.map.flat());
}

int exhaustive_demand_paging(const std::vector<ExpertId>& seq, int capacity) {
  std::function<int(std::size_t, std::vector<ExpertId>)> go = [&](std::size_t pos, std::vector<ExpertId> cache) {
    if (pos == seq.size()) return 0;
    const auto id = seq[pos];
    if (std::find(cache.begin(), cache.end(), id) != cache.end()) return go(pos + 1, cache);
    if (capacity == 0) return 1 + go(pos + 1, cache);
    if (static_cast<int>(cache.size()) < capacity) {
      cache.push_back(id);
      return 1 + go(pos + 1, cache);
    }
    int best = 1 << 30;
    for (std::size_t v = 0; v < cache.size(); ++v) {
      auto next = cache;
      next[v] = id;
      best = std::min(best, 1 + go(pos + 1, next));
    }
    return best;
  };
  return go(0, {});
}

int dfs_optimal_misses(const std::vector<ExpertId>& seq, int capacity) {
  std::function<int(std::size_t, std::set<ExpertId>)> go = [&](std::size_t pos, std::set<ExpertId> cache) {
    if (pos == seq.size()) return 0;
    const auto id = seq[pos];
    if (cache.count(id)) return go(pos + 1, cache);
    int best = 1 + go(pos + 1, cache);
    if (capacity > 0) {
      if (static_cast<int>(cache.size()) < capacity) {
        auto next = cache;
        next.insert(id);
        best = std::min(best, 1 + go(pos + 1, next));
      } else {
        for (const auto& v : cache) {
          auto next = cache;
          next.erase(v);
          next.insert(id);
          best = std::min(best, 1 + go(pos + 1, next));
        }
      }
    }
    return best;
  };
  return go(0, {});
}

std::vector<ExpertId> flat_sequence(const Workload& workload) {
  std::vector<ExpertId> out;
  for (const auto& r : workload.requests)
    for (const auto& it : r.iterations)
      for (int l = 0; l < workload.shape.num_layers; ++l) {
        auto act = it.activated[static_cast<std::size_t>(l)];
        std::sort(act.begin(), act.end());
        for (int e : act) out.push_back({l, e});
      }
  return out;
}

std::int64_t tally_activations(const Workload& workload) {
  std::int64_t n = 0;
  for (const auto& r : workload.requests)
    n += static_cast<std::int64_t>(r.iterations.size()) * workload.shape.num_layers * workload.shape.top_k;
  return n;
}

std::int64_t distinct_activated(const Workload& workload) {
  std::set<ExpertId> s;
  for (const auto& id : flat_sequence(workload)) s.insert(id);
  return static_cast<std::int64_t>(s.size());
}

std::optional<ExpertId> expected_victim(const ExpertCache& cache, EvictionRule rule, double now,
                                        std::optional<ExpertId> exclude) {
  std::optional<ExpertId> best;
  double best_rank = 0.0;
  std::uint64_t best_seq = 0;
  for (const auto& id : cache.resident_experts()) {
    if (exclude && *exclude == id) continue;
    const auto* e = cache.entry(id);
    const double r = rule == EvictionRule::lru   ? now - e->last_used
                     : rule == EvictionRule::lfu ? 1.0 / e->freq
                                                 : 1.0 / (std::max(e->p, 1e-6) * e->freq);
    if (!best || r > best_rank || (r == best_rank && e->insert_seq < best_seq)) {
      best = id;
      best_rank = r;
      best_seq = e->insert_seq;
    }
  }
  return best;
}

std::vector<float> random_row(std::mt19937_64& rng, int n, bool allow_ties) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> raw(static_cast<std::size_t>(n));
  for (auto& v : raw) v = u(rng);
  if (allow_ties && n > 1 && u(rng) < 0.3) raw[1] = raw[0];
  if (allow_ties && u(rng) < 0.2) raw.back() = 0.0;
  double s = 0.0;
  for (double v : raw) s += v;
  if (s == 0.0) raw[0] = s = 1.0;
  std::vector<float> out;
  for (double v : raw) out.push_back(static_cast<float>(v / s));
  return out;
}

Workload tiny_workload(std::mt19937_64& rng, int max_layers, int max_experts, int max_iterations) {
  std::uniform_int_distribution<int> layers(2, max_layers);
  std::uniform_int_distribution<int> experts(2, max_experts);
  SyntheticConfig cfg;
  cfg.shape.num_layers = layers(rng);
  cfg.shape.experts_per_layer = experts(rng);
  cfg.shape.top_k = std::uniform_int_distribution<int>(1, std::min(2, cfg.shape.experts_per_layer))(rng);
  cfg.shape.hidden_dim = 8;
  cfg.shape.expert_size_bytes = 1'000'000;
  cfg.shape.expert_load_time_ms = 4.0;
  cfg.num_clusters = std::uniform_int_distribution<int>(1, 2)(rng);
  cfg.requests_per_cluster = 1;
  cfg.min_iterations = 1;
  cfg.max_iterations = std::max(1, max_iterations / cfg.num_clusters);
  cfg.patterns_per_cluster = 2;
  cfg.dirichlet_concentration = 0.5;
  cfg.seed = rng();
  return generate_synthetic(cfg);
}

Workload workload_from_maps(const ModelShape& shape, const std::vector<std::vector<ExpertMap>>& per_request) {
  Workload w;
  w.shape = shape;
  for (std::size_t r = 0; r < per_request.size(); ++r) {
    RequestTrace t;
    t.request_id = "req-" + std::to_string(r);
    t.embedding.assign(static_cast<std::size_t>(shape.hidden_dim), 0.0f);
    t.embedding[r % t.embedding.size()] = 1.0f;
    for (std::size_t i = 0; i < per_request[r].size(); ++i)
      t.iterations.push_back(IterationRecord::from_map(static_cast<int>(i), per_request[r][i], shape.top_k));
    w.requests.push_back(std::move(t));
  }
  return w;
}

}  // namespace moesim::testing
