#include "moesim/sim_harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "moesim/error.hpp"
#include "moesim/metrics.hpp"

namespace moesim {

using ordered_json = nlohmann::ordered_json;

RunConfig RunConfig::for_shape(const ModelShape& shape) {
  RunConfig c;
  c.shape = shape;
  c.latency = LatencyModel::for_shape(shape);
  c.cache_capacity_experts = shape.offloadable_experts();
  return c;
}

void RunConfig::validate() const {
  shape.validate();
  latency.validate();
  if (prefetch_distance < 1 || prefetch_distance >= shape.num_layers)
    throw InvalidArgument(fmt::format("prefetch distance {} outside [1, {})", prefetch_distance, shape.num_layers));
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (store_capacity < 1) throw InvalidArgument("store capacity must be >= 1");
  if (cache_capacity_experts < 0) throw InvalidArgument("cache capacity must be >= 0");
}

int resolve_cache_capacity(const ModelShape& shape, std::optional<int> experts, std::optional<double> gigabytes) {
  const int all = shape.offloadable_experts();
  if (experts) {
    if (*experts < 0) throw InvalidArgument("cache capacity must be >= 0");
    return std::min(*experts, all);
  }
  if (gigabytes) {
    if (!(*gigabytes >= 0.0)) throw InvalidArgument("cache size must be >= 0 GB");
    const double n = std::floor(*gigabytes * 1e9 / static_cast<double>(shape.expert_size_bytes));
    return static_cast<int>(std::min<double>(n, all));
  }
  return all;
}

namespace {

void check_workload(const Workload& workload, const ModelShape& shape) {
  if (!(workload.shape == shape))
    throw ShapeMismatchError("workload shape does not match the run configuration", "", -1, -1);
  const auto violations = validate_trace(workload, shape);
  if (!violations.empty())
    throw InvalidArgument(fmt::format("workload fails validation ({} violations), first: {}", violations.size(),
                                      violations.front().to_string()));
}

RunResult run_oracle(const Workload& workload, const RunConfig& config) {
  RunResult out;
  const double te = config.latency.expert_load_ms();
  if (config.policy == PolicyKind::belady) {
    out.report = belady_demand_oracle(workload, config.cache_capacity_experts, te).report;
    return out;
  }
  const double t = brute_force_offline_optimal(workload, config.cache_capacity_experts, te);
  auto& r = out.report;
  r.policy_name = "exact";
  r.total_activations = workload.total_activations();
  r.misses = std::llround(t / te);
  r.hits = r.total_activations - r.misses;
  r.expert_hit_rate = r.total_activations ? static_cast<double>(r.hits) / static_cast<double>(r.total_activations) : 0.0;
  r.total_stall_ms = t;
  return out;
}

struct PendingPlan {
  double ready = 0.0;
  std::uint64_t seq = 0;
  std::int64_t deadline = 0;
  PolicyDecision decision;
};

struct PlanLater {
  bool operator()(const PendingPlan& a, const PendingPlan& b) const {
    return a.ready != b.ready ? a.ready > b.ready : a.seq > b.seq;
  }
};

struct ActiveRequest {
  int request = 0;
  int iteration = 0;
  double start = 0.0;
};

class Simulation {
 public:
  Simulation(const Workload& workload, const RunConfig& config)
      : w_(workload),
        cfg_(config),
        L_(config.shape.num_layers),
        J_(config.shape.experts_per_layer),
        d_(config.prefetch_distance),
        policy_(make_policy(config.policy, PolicyParams{config.shape, config.prefetch_distance})),
        cache_(CacheConfig{config.cache_capacity_experts, config.latency.expert_load_ms(), policy_->eviction_rule(),
                           policy_->guided_admission(), config.abort_inflight},
               L_, J_, [this](const SimEvent& e) { sink(e); }) {
    prefetching_ = policy_->prefetches() && !cfg_.disable_prefetch;
    plan_latency_ = policy_->planning_latency_ms(cfg_.latency.match_latency_ms);
    if (policy_->uses_store()) {
      store_.emplace(StoreConfig{cfg_.store_capacity, d_, cfg_.shape});
      if (cfg_.warm_contexts && !cfg_.cold_store) store_->insert_batch(*cfg_.warm_contexts);
    }
  }

  RunResult run() {
    sink({.time = 0.0, .kind = EventKind::run_start, .detail = std::string(policy_->name())});
    const int n = static_cast<int>(w_.requests.size());
    result_.request_latency_ms.assign(static_cast<std::size_t>(n), 0.0);
    int next = 0;
    std::vector<ActiveRequest> active;
    double t = 0.0;
    std::int64_t step = 0;

    while (next < n || !active.empty()) {
      bool admitted = false;
      while (static_cast<int>(active.size()) < cfg_.batch_size && next < n && arrival(next) <= t) {
        active.push_back({next, 0, t});
        ++next;
        admitted = true;
      }
      if (active.empty()) {
        t = arrival(next);
        advance_to(t);
        continue;
      }
      if (admitted && cfg_.freq_scope == FreqScope::request) cache_.reset_frequencies();
      t = run_step(active, step, t);

      for (auto it = active.begin(); it != active.end();) {
        const auto& req = w_.requests[static_cast<std::size_t>(it->request)];
        if (++it->iteration >= static_cast<int>(req.iterations.size())) {
          const double origin = cfg_.use_arrivals ? req.arrival_time_ms : it->start;
          result_.request_latency_ms[static_cast<std::size_t>(it->request)] = t - origin;
          sink({.time = t, .kind = EventKind::request_end, .request = it->request, .value = t - origin, .detail = {}});
          it = active.erase(it);
        } else {
          ++it;
        }
      }
      ++step;
    }
    result_.report = acc_.finish();
    result_.makespan_ms = t;
    result_.mean_match_score = score_n_ ? score_sum_ / static_cast<double>(score_n_) : 0.0;
    return std::move(result_);
  }

 private:
  double arrival(int r) const {
    return cfg_.use_arrivals ? w_.requests[static_cast<std::size_t>(r)].arrival_time_ms : 0.0;
  }

  void sink(const SimEvent& e) {
    acc_.consume(e);
    if (cfg_.record_events) result_.events.push_back(e);
  }

  void advance_to(double t) {
    while (!plans_.empty() && plans_.top().ready <= t) {
      PendingPlan plan = plans_.top();
      plans_.pop();
      const double at = std::max(plan.ready, cache_.now());
      cache_.step_to(at);
      apply(plan, at);
    }
    cache_.step_to(t);
  }

  void apply(const PendingPlan& plan, double at) {
    const auto& d = plan.decision;
    sink({.time = at, .kind = EventKind::plan_applied, .layer = d.target_layer,
          .count = static_cast<std::int64_t>(d.prefetch_set.size()), .detail = {}});
    if (policy_->eviction_rule() == EvictionRule::guided) cache_.update_guidance(d.target_layer, d.guidance);
    for (const auto& item : d.prefetch_set)
      cache_.enqueue_prefetch({d.target_layer, item.expert}, item.p, item.priority, plan.deadline, at);
  }

  void issue(std::vector<Guidance>& per_slot, int target, int current, std::int64_t step, double t) {
    if (per_slot.empty()) return;
    for (const auto& g : per_slot) {
      score_sum_ += g.score;
      ++score_n_;
    }
    PendingPlan plan;
    plan.ready = t + plan_latency_;
    plan.seq = plan_seq_++;
    plan.deadline = step * L_ + target;
    plan.decision = merge_decision(*policy_, per_slot, target, current, t);
    sink({.time = t, .kind = EventKind::plan_issued, .step = step, .layer = target,
          .count = static_cast<std::int64_t>(plan.decision.prefetch_set.size()), .value = plan.ready, .detail = {}});
    plans_.push(std::move(plan));
  }

  double run_step(const std::vector<ActiveRequest>& active, std::int64_t step, double t) {
    const double t0 = t;
    advance_to(t);
    sink({.time = t, .kind = EventKind::step_start, .step = step, .count = static_cast<std::int64_t>(active.size()), .detail = {}});
    if (store_) policy_->on_step_start(store_->snapshot());
    for (const auto& a : active)
      policy_->on_iteration_start(a.request, w_.requests[static_cast<std::size_t>(a.request)], a.iteration);

    if (prefetching_) {
      std::vector<std::vector<Guidance>> initial(static_cast<std::size_t>(d_));
      for (const auto& a : active) {
        auto gs = policy_->initial_guidance(a.request);
        for (std::size_t l = 0; l < gs.size() && l < initial.size(); ++l) initial[l].push_back(std::move(gs[l]));
      }
      for (int l = 0; l < d_; ++l) issue(initial[static_cast<std::size_t>(l)], l, -1, step, t);
    }

    for (int l = 0; l < L_; ++l) {
      advance_to(t);
      cache_.set_cursor(step * L_ + l);
      sink({.time = t, .kind = EventKind::layer_start, .step = step, .layer = l, .detail = {}});

      std::map<int, std::pair<std::int64_t, double>> activated;
      for (const auto& a : active) {
        const auto& rec = w_.requests[static_cast<std::size_t>(a.request)].iterations[static_cast<std::size_t>(a.iteration)];
        const auto row = rec.map.row(l);
        policy_->on_layer_observed(a.request, l, row);
        for (int e : rec.activated[static_cast<std::size_t>(l)]) {
          auto& [mult, p] = activated[e];
          ++mult;
          p = std::max(p, static_cast<double>(row[static_cast<std::size_t>(e)]));
        }
      }
      if (prefetching_ && l + d_ < L_) {
        std::vector<Guidance> gs;
        for (const auto& a : active)
          if (auto g = policy_->guidance_for(a.request, l + d_)) gs.push_back(std::move(*g));
        issue(gs, l + d_, l, step, t);
        advance_to(t);
      }

      cache_.unpin_all();
      for (const auto& [e, info] : activated) cache_.pin({l, e});
      double ready = t;
      for (const auto& [e, info] : activated) {
        const auto r = cache_.access({l, e}, info.second, t);
        sink({.time = t, .kind = r.hit ? EventKind::hit : EventKind::miss, .step = step, .layer = l, .expert = e,
              .count = info.first, .value = r.ready_time, .detail = r.late_prefetch ? "late_prefetch" : ""});
        ready = std::max(ready, r.ready_time);
      }
      const double stall = ready - t;
      advance_to(ready);
      sink({.time = ready, .kind = EventKind::layer_end, .step = step, .layer = l, .value = stall, .detail = {}});
      t = ready + cfg_.latency.per_layer_compute_ms;
    }
    cache_.unpin_all();
    advance_to(t);

    std::vector<StoredContext> finished;
    for (const auto& a : active) {
      sink({.time = t, .kind = EventKind::iteration_end, .step = step, .request = a.request, .iteration = a.iteration,
            .value = t - t0, .detail = {}});
      if (store_) {
        const auto& req = w_.requests[static_cast<std::size_t>(a.request)];
        finished.push_back(make_context(req.embedding, req.iterations[static_cast<std::size_t>(a.iteration)].map,
                                        req.request_id, a.iteration));
      }
    }
    if (store_ && !finished.empty()) store_->insert_batch(std::move(finished));
    return t;
  }

  const Workload& w_;
  const RunConfig& cfg_;
  int L_;
  int J_;
  int d_;
  std::unique_ptr<OffloadPolicy> policy_;
  ReportAccumulator acc_;
  RunResult result_;
  ExpertCache cache_;
  std::optional<MapStore> store_;
  bool prefetching_ = true;
  double plan_latency_ = 0.0;
  std::priority_queue<PendingPlan, std::vector<PendingPlan>, PlanLater> plans_;
  std::uint64_t plan_seq_ = 0;
  double score_sum_ = 0.0;
  std::int64_t score_n_ = 0;
};

double trend(std::span<const int> xs, std::span<const double> ys) {
  std::vector<double> x(xs.begin(), xs.end());
  try {
    return spearman_corr(x, ys);
  } catch (const UndefinedCorrelation&) {
    return std::numeric_limits<double>::quiet_NaN();
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

ordered_json report_row(const RunReport& r) {
  ordered_json row;
  row["policy"] = r.policy_name;
  row["hit_rate"] = r.expert_hit_rate;
  row["misses"] = r.misses;
  row["total_stall_ms"] = r.total_stall_ms;
  row["ttft_proxy_ms"] = r.ttft_proxy_ms;
  row["mean_tpot_proxy_ms"] = r.mean_tpot_proxy_ms;
  row["peak_resident_experts"] = r.peak_resident_experts;
  row["prefetches_wasted"] = r.prefetches_wasted;
  return row;
}

ordered_json json_number_or_null(double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); }

}  // namespace

RunResult run_simulation(const Workload& workload, const RunConfig& config) {
  config.validate();
  check_workload(workload, config.shape);
  if (is_oracle(config.policy)) return run_oracle(workload, config);
  return Simulation(workload, config).run();
}

Comparison compare_policies(const Workload& workload, const RunConfig& base, const std::vector<PolicyKind>& policies,
                            std::optional<PolicyKind> baseline) {
  if (policies.empty()) throw InvalidArgument("compare_policies needs at least one policy");
  Comparison c;
  for (auto kind : policies) {
    RunConfig cfg = base;
    cfg.policy = kind;
    cfg.record_events = false;
    auto r = run_simulation(workload, cfg);
    c.reports.push_back(std::move(r.report));
    c.mean_match_scores.push_back(r.mean_match_score);
  }
  PolicyKind base_kind = baseline.value_or(
      std::find(policies.begin(), policies.end(), PolicyKind::no_prefetch) != policies.end() ? PolicyKind::no_prefetch
                                                                                             : policies.front());
  const auto it = std::find(policies.begin(), policies.end(), base_kind);
  if (it == policies.end())
    throw InvalidArgument(fmt::format("baseline '{}' is not among the compared policies", policy_name(base_kind)));
  const auto& b = c.reports[static_cast<std::size_t>(it - policies.begin())];
  c.baseline = b.policy_name;
  for (const auto& r : c.reports) {
    PolicyDelta d;
    d.policy = r.policy_name;
    d.hit_rate_delta = r.expert_hit_rate - b.expert_hit_rate;
    d.stall_reduction = b.total_stall_ms > 0.0 ? 1.0 - r.total_stall_ms / b.total_stall_ms : 0.0;
    c.deltas.push_back(d);
  }
  return c;
}

std::string_view sweep_dimension_name(SweepDimension d) {
  switch (d) {
    case SweepDimension::cache_capacity:
      return "cache_capacity";
    case SweepDimension::store_capacity:
      return "store_capacity";
    case SweepDimension::prefetch_distance:
      return "prefetch_distance";
    case SweepDimension::batch_size:
      return "batch_size";
  }
  return "?";
}

SweepDimension parse_sweep_dimension(std::string_view name) {
  for (auto d : {SweepDimension::cache_capacity, SweepDimension::store_capacity, SweepDimension::prefetch_distance,
                 SweepDimension::batch_size})
    if (sweep_dimension_name(d) == name) return d;
  throw InvalidArgument(fmt::format("unknown sweep dimension '{}'", name));
}

SweepTable sweep(const Workload& workload, const RunConfig& base, SweepDimension dimension,
                 const std::vector<int>& values, const std::vector<PolicyKind>& policies) {
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");
  SweepTable t;
  t.dimension = dimension;
  t.values = values;
  for (int v : values) {
    RunConfig cfg = base;
    switch (dimension) {
      case SweepDimension::cache_capacity:
        cfg.cache_capacity_experts = v;
        break;
      case SweepDimension::store_capacity:
        cfg.store_capacity = v;
        break;
      case SweepDimension::prefetch_distance:
        cfg.prefetch_distance = v;
        break;
      case SweepDimension::batch_size:
        cfg.batch_size = v;
        break;
    }
    t.points.push_back(compare_policies(workload, cfg, policies, policies.front()));
  }
  for (std::size_t p = 0; p < policies.size(); ++p) {
    std::vector<double> hits, scores;
    for (const auto& pt : t.points) {
      hits.push_back(pt.reports[p].expert_hit_rate);
      scores.push_back(pt.mean_match_scores[p]);
    }
    t.hit_rate_trend.push_back(trend(values, hits));
    t.match_score_trend.push_back(trend(values, scores));
  }
  return t;
}

std::string comparison_to_csv(const Comparison& c) { return reports_to_csv(c.reports); }

std::string comparison_to_json(const Comparison& c) {
  ordered_json j;
  j["baseline"] = c.baseline;
  j["policies"] = ordered_json::array();
  for (std::size_t i = 0; i < c.reports.size(); ++i) {
    auto row = report_row(c.reports[i]);
    row["hit_rate_delta"] = c.deltas[i].hit_rate_delta;
    row["stall_reduction"] = c.deltas[i].stall_reduction;
    j["policies"].push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

std::string sweep_to_csv(const SweepTable& t) {
  std::string out =
      "dimension,value,policy,hit_rate,misses,total_stall_ms,ttft_proxy_ms,mean_tpot_proxy_ms,peak_resident_experts,"
      "prefetches_wasted,mean_match_score\n";
  for (std::size_t i = 0; i < t.points.size(); ++i)
    for (std::size_t p = 0; p < t.points[i].reports.size(); ++p) {
      const auto& r = t.points[i].reports[p];
      fmt::format_to(std::back_inserter(out), "{},{},{},{},{},{},{},{},{},{},{}\n", sweep_dimension_name(t.dimension),
                     t.values[i], r.policy_name, r.expert_hit_rate, r.misses, r.total_stall_ms, r.ttft_proxy_ms,
                     r.mean_tpot_proxy_ms, r.peak_resident_experts, r.prefetches_wasted,
                     t.points[i].mean_match_scores[p]);
    }
  return out;
}

std::string sweep_to_json(const SweepTable& t) {
  ordered_json j;
  j["dimension"] = sweep_dimension_name(t.dimension);
  j["points"] = ordered_json::array();
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    ordered_json pt;
    pt["value"] = t.values[i];
    pt["policies"] = ordered_json::array();
    for (std::size_t p = 0; p < t.points[i].reports.size(); ++p) {
      auto row = report_row(t.points[i].reports[p]);
      row["mean_match_score"] = t.points[i].mean_match_scores[p];
      pt["policies"].push_back(std::move(row));
    }
    j["points"].push_back(std::move(pt));
  }
  ordered_json trends = ordered_json::object();
  if (!t.points.empty())
    for (std::size_t p = 0; p < t.points.front().reports.size(); ++p) {
      ordered_json tr;
      tr["hit_rate_spearman"] = json_number_or_null(t.hit_rate_trend[p]);
      tr["match_score_spearman"] = json_number_or_null(t.match_score_trend[p]);
      trends[t.points.front().reports[p].policy_name] = std::move(tr);
    }
  j["trends"] = std::move(trends);
  return j.dump(2) + "\n";
}

std::pair<Workload, Workload> split_workload(const Workload& workload, double first_fraction, std::uint64_t seed) {
  if (!(first_fraction >= 0.0 && first_fraction <= 1.0)) throw InvalidArgument("split fraction must be in [0, 1]");
  const std::size_t n = workload.requests.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto k = static_cast<std::size_t>(std::floor(first_fraction * static_cast<double>(n)));
  if (n >= 2 && first_fraction > 0.0 && first_fraction < 1.0) k = std::clamp<std::size_t>(k, 1, n - 1);
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  Workload a{workload.shape, {}, workload.generator_json};
  Workload b{workload.shape, {}, workload.generator_json};
  for (std::size_t i = 0; i < n; ++i) (i < k ? a : b).requests.push_back(workload.requests[idx[i]]);
  return {std::move(a), std::move(b)};
}

std::vector<std::pair<double, double>> latency_cdf(std::vector<double> latencies) {
  std::sort(latencies.begin(), latencies.end());
  std::vector<std::pair<double, double>> out;
  const auto n = static_cast<double>(latencies.size());
  for (std::size_t i = 0; i < latencies.size(); ++i) {
    if (i + 1 < latencies.size() && latencies[i + 1] == latencies[i]) continue;
    out.emplace_back(latencies[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

}  // namespace moesim
