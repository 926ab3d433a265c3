// moesim: synthetic MoE expert traces, offloading simulation and reports.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "moesim/error.hpp"
#include "moesim/map_store.hpp"
#include "moesim/matcher.hpp"
#include "moesim/metrics.hpp"
#include "moesim/sim_harness.hpp"
#include "moesim/synthetic.hpp"
#include "moesim/trace_io.hpp"

using namespace moesim;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;

struct ShapeArgs {
  std::string preset = "mixtral";
  std::optional<int> layers, experts, top_k, hidden;
  std::optional<double> expert_load_ms;

  void add(CLI::App* app) {
    app->add_option("--shape", preset, "Model preset")->check(CLI::IsMember({"mixtral", "qwen", "phi"}));
    app->add_option("--layers", layers, "Override layer count");
    app->add_option("--experts", experts, "Override experts per layer");
    app->add_option("--top-k", top_k, "Override activated experts per layer");
    app->add_option("--hidden", hidden, "Override embedding width");
    app->add_option("--expert-load-ms", expert_load_ms, "Fixed per-expert transfer time");
  }

  ModelShape resolve() const {
    ModelShape s = preset == "qwen" ? qwen15_moe_shape() : preset == "phi" ? phi35_moe_shape() : mixtral_8x7b_shape();
    if (layers) s.num_layers = *layers;
    if (experts) s.experts_per_layer = *experts;
    if (top_k) s.top_k = *top_k;
    if (hidden) s.hidden_dim = *hidden;
    if (expert_load_ms) s.expert_load_time_ms = *expert_load_ms;
    s.validate();
    return s;
  }
};

struct SimArgs {
  std::string trace;
  std::string policy = "fmoe";
  int store_capacity = 1024;
  double match_latency_ms = 0.5;
  std::optional<double> cache_gb;
  std::optional<int> cache_experts;
  double bandwidth_gbps = 32.0;
  double compute_ms = 1.0;
  int prefetch_distance = 3;
  std::string freq_scope = "request";
  bool abort_inflight = false;
  bool cold_store = false;
  bool demand_only = false;
  bool online = false;
  int batch_size = 1;
  std::string warm_store;
  std::string warm_trace;
  std::optional<double> expert_load_ms;

  void add(CLI::App* app, bool with_policy) {
    app->add_option("--trace", trace, "Workload directory")->required();
    if (with_policy)
      app->add_option("--policy", policy, "Offloading policy")
          ->check(CLI::IsMember({"fmoe", "no_prefetch", "lru", "lfu", "speculative", "hit_count", "belady", "exact"}));
    app->add_option("--store-capacity", store_capacity, "Expert map store capacity");
    app->add_option("--match-latency-ms", match_latency_ms, "Modeled map matching latency");
    auto* gb = app->add_option("--cache-gb", cache_gb, "GPU expert cache size in GB");
    auto* ex = app->add_option("--cache-experts", cache_experts, "GPU expert cache size in experts");
    gb->excludes(ex);
    app->add_option("--bandwidth-gbps", bandwidth_gbps, "CPU to GPU bandwidth");
    app->add_option("--compute-ms-per-layer", compute_ms, "Per-layer compute time");
    app->add_option("--prefetch-distance", prefetch_distance, "Layers between prefetch issue and target");
    app->add_option("--freq-scope", freq_scope, "Hit frequency reset scope")
        ->check(CLI::IsMember({"request", "global"}));
    app->add_flag("--abort-inflight", abort_inflight, "On-demand loads abort an in-flight prefetch");
    app->add_flag("--cold-store", cold_store, "Start with an empty store");
    app->add_flag("--demand-only", demand_only, "Disable prefetching");
    app->add_flag("--online", online, "Gate request starts on arrival timestamps");
    app->add_option("--batch-size", batch_size, "Requests served per step");
    app->add_option("--warm-store", warm_store, "Store export to preload");
    app->add_option("--warm-trace", warm_trace, "Workload whose iterations preload the store");
    app->add_option("--expert-load-ms", expert_load_ms, "Fixed per-expert transfer time");
  }

  RunConfig config(const ModelShape& shape) const {
    auto cfg = RunConfig::for_shape(shape);
    cfg.policy = parse_policy(policy);
    cfg.store_capacity = store_capacity;
    cfg.prefetch_distance = prefetch_distance;
    cfg.latency = LatencyModel::for_shape(shape, bandwidth_gbps);
    cfg.latency.per_layer_compute_ms = compute_ms;
    cfg.latency.match_latency_ms = match_latency_ms;
    if (expert_load_ms) cfg.latency.expert_load_override_ms = *expert_load_ms;
    cfg.cache_capacity_experts = resolve_cache_capacity(shape, cache_experts, cache_gb);
    cfg.batch_size = batch_size;
    cfg.freq_scope = freq_scope == "global" ? FreqScope::global : FreqScope::request;
    cfg.abort_inflight = abort_inflight;
    cfg.cold_store = cold_store;
    cfg.disable_prefetch = demand_only;
    cfg.use_arrivals = online;
    std::vector<StoredContext> warm;
    if (!warm_store.empty()) warm = MapStore::read_export(warm_store, shape);
    if (!warm_trace.empty()) {
      auto more = contexts_from_workload(load_workload(warm_trace));
      std::move(more.begin(), more.end(), std::back_inserter(warm));
    }
    if (!warm.empty()) cfg.warm_contexts = std::make_shared<const std::vector<StoredContext>>(std::move(warm));
    return cfg;
  }
};

struct OutputArgs {
  std::string csv;
  std::string json;

  void add(CLI::App* app) {
    app->add_option("--out-csv", csv, "Write CSV here");
    app->add_option("--out-json", json, "Write JSON here");
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError(path, "cannot open for writing");
  f << text;
}

void emit(const OutputArgs& out, const std::string& csv, const std::string& json) {
  if (!out.csv.empty()) write_text(out.csv, csv);
  if (!out.json.empty()) write_text(out.json, json);
  std::cout << csv;
}

std::vector<PolicyKind> parse_policies(const std::vector<std::string>& names) {
  std::vector<PolicyKind> out;
  for (const auto& n : names) out.push_back(parse_policy(n));
  return out;
}

std::vector<int> parse_sweep_values(const std::vector<std::string>& raw, SweepDimension dim, const ModelShape& shape) {
  std::vector<int> out;
  for (const auto& v : raw) {
    if (!v.empty() && v.back() == '%') {
      if (dim != SweepDimension::cache_capacity) throw InvalidArgument("percent values only apply to cache_capacity");
      const double pct = std::stod(v.substr(0, v.size() - 1));
      out.push_back(static_cast<int>(std::lround(pct / 100.0 * shape.offloadable_experts())));
    } else {
      out.push_back(std::stoi(v));
    }
  }
  return out;
}

int cmd_gen(const SyntheticConfig& base, const ShapeArgs& shape, const std::string& out_dir) {
  auto cfg = base;
  cfg.shape = shape.resolve();
  const auto w = generate_synthetic(cfg);
  save_workload(w, out_dir);
  fmt::print("wrote {} requests, {} iterations to {}\n", w.requests.size(), w.total_iterations(), out_dir);
  return 0;
}

int cmd_run(const SimArgs& sim, const OutputArgs& out, const std::string& events_path, const std::string& cdf_path) {
  const auto w = load_workload(sim.trace);
  auto cfg = sim.config(w.shape);
  cfg.record_events = !events_path.empty();
  const auto r = run_simulation(w, cfg);
  if (!events_path.empty()) write_event_log(events_path, r.events);
  if (!cdf_path.empty()) {
    std::string csv = "latency_ms,cumulative_fraction\n";
    for (const auto& [x, f] : latency_cdf(r.request_latency_ms)) csv += fmt::format("{},{}\n", x, f);
    write_text(cdf_path, csv);
  }
  const std::vector<RunReport> one{r.report};
  emit(out, reports_to_csv(one), report_to_full_json(r.report));
  return 0;
}

int cmd_compare(const SimArgs& sim, const std::vector<std::string>& policies, const std::string& baseline,
                const OutputArgs& out) {
  const auto w = load_workload(sim.trace);
  const auto cfg = sim.config(w.shape);
  std::optional<PolicyKind> base;
  if (!baseline.empty()) base = parse_policy(baseline);
  const auto c = compare_policies(w, cfg, parse_policies(policies), base);
  emit(out, comparison_to_csv(c), comparison_to_json(c));
  return 0;
}

int cmd_sweep(const SimArgs& sim, const std::string& dimension, const std::vector<std::string>& values,
              const std::vector<std::string>& policies, const OutputArgs& out) {
  const auto w = load_workload(sim.trace);
  const auto cfg = sim.config(w.shape);
  const auto dim = parse_sweep_dimension(dimension);
  const auto t = sweep(w, cfg, dim, parse_sweep_values(values, dim, w.shape), parse_policies(policies));
  emit(out, sweep_to_csv(t), sweep_to_json(t));
  for (std::size_t p = 0; p < t.hit_rate_trend.size(); ++p)
    std::cerr << fmt::format("{} hit-rate spearman {:.4f}\n", t.points.front().reports[p].policy_name,
                             t.hit_rate_trend[p]);
  return 0;
}

int cmd_entropy(const std::string& trace, int upto, const OutputArgs& out) {
  const auto w = load_workload(trace);
  const auto fine = entropy_profile(w, Granularity::fine, 0);
  const auto coarse = entropy_profile(w, Granularity::coarse, upto);
  std::string csv = "layer,fine_entropy,coarse_entropy,margin\n";
  ordered_json j;
  j["layers"] = ordered_json::array();
  for (std::size_t l = 0; l < fine.per_layer_mean_entropy.size(); ++l) {
    const double f = fine.per_layer_mean_entropy[l];
    const double c = coarse.per_layer_mean_entropy[l];
    csv += fmt::format("{},{},{},{}\n", l, f, c, c - f);
    j["layers"].push_back({{"layer", l}, {"fine_entropy", f}, {"coarse_entropy", c}, {"margin", c - f}});
  }
  emit(out, csv, j.dump(2) + "\n");
  return 0;
}

int cmd_bench_matcher(int batch, int capacity, int hidden, int layers, int experts, int repeats, double limit_ms,
                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  auto random_vec = [&](int n) {
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = normal(rng);
    return v;
  };
  ModelShape shape;
  shape.num_layers = layers;
  shape.experts_per_layer = experts;
  shape.top_k = std::min(2, experts);
  shape.hidden_dim = hidden;
  MapStore store(StoreConfig{capacity, std::min(3, layers - 1), shape});
  std::vector<StoredContext> ctx;
  for (int c = 0; c < capacity; ++c)
    ctx.push_back(make_context(random_vec(hidden), ExpertMap::uniform(layers, experts)));
  store.insert_batch(std::move(ctx));
  const auto snap = store.snapshot();
  std::vector<std::vector<float>> queries;
  for (int b = 0; b < batch; ++b) queries.push_back(random_vec(hidden));

  std::vector<double> ms;
  double sink = 0.0;
  for (int r = 0; r <= repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = semantic_scores(queries, *snap);
    const auto t1 = std::chrono::steady_clock::now();
    sink += m.values.front();
    if (r > 0) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms[ms.size() / 2];
  const double worst = ms.back();
  const double pairs_per_s = static_cast<double>(batch) * capacity / (median / 1000.0);
  fmt::print("batch,capacity,hidden,median_ms,max_ms,pairs_per_second,limit_ms,pass\n");
  fmt::print("{},{},{},{:.4f},{:.4f},{:.0f},{},{}\n", batch, capacity, hidden, median, worst, pairs_per_s, limit_ms,
             worst < limit_ms ? "true" : "false");
  (void)sink;
  return worst < limit_ms ? 0 : 1;
}

int cmd_validate(const std::string& trace) {
  const auto w = load_workload(trace);
  const auto v = validate_trace(w, w.shape);
  for (const auto& x : v) std::cerr << x.to_string() << "\n";
  fmt::print("{} requests, {} violations\n", w.requests.size(), v.size());
  return v.empty() ? 0 : kExitValidation;
}

int cmd_build_store(const std::string& trace, int capacity, int distance, const std::string& out_dir) {
  const auto w = load_workload(trace);
  MapStore store(StoreConfig{capacity, distance, w.shape});
  const auto log = store.insert_batch(contexts_from_workload(w));
  store.export_to(out_dir);
  fmt::print("stored {} contexts ({} replacements) in {}\n", store.size(), log.size(), out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoE expert offloading simulator"};
  app.require_subcommand(1);

  SyntheticConfig gen_cfg;
  ShapeArgs gen_shape;
  std::string gen_out;
  std::vector<int> gen_iters{gen_cfg.min_iterations, gen_cfg.max_iterations};
  auto* gen = app.add_subcommand("gen", "Generate a synthetic clustered workload");
  gen_shape.add(gen);
  gen->add_option("--clusters", gen_cfg.num_clusters, "Semantic clusters");
  gen->add_option("--requests-per-cluster", gen_cfg.requests_per_cluster, "Requests per cluster");
  gen->add_option("--iterations", gen_iters, "Iterations per request as MIN MAX")->expected(2);
  gen->add_option("--concentration", gen_cfg.dirichlet_concentration, "Dirichlet concentration");
  gen->add_option("--embedding-noise", gen_cfg.embedding_noise_sigma, "Embedding noise sigma");
  gen->add_option("--drift", gen_cfg.drift_sigma, "Per-iteration logit drift sigma");
  gen->add_option("--patterns", gen_cfg.patterns_per_cluster, "Routing patterns per cluster");
  gen->add_option("--inter-arrival-ms", gen_cfg.inter_arrival_ms, "Mean request inter-arrival time");
  gen->add_option("--seed", gen_cfg.seed, "Random seed");
  gen->add_option("-o,--out", gen_out, "Output directory")->required();

  SimArgs run_sim;
  OutputArgs run_out;
  std::string run_events, run_cdf;
  auto* run = app.add_subcommand("run", "Simulate one policy");
  run_sim.add(run, true);
  run_out.add(run);
  run->add_option("--events", run_events, "Write the event log as JSONL");
  run->add_option("--latency-cdf", run_cdf, "Write the request latency CDF as CSV");

  SimArgs cmp_sim;
  OutputArgs cmp_out;
  std::vector<std::string> cmp_policies{"fmoe", "hit_count", "lfu", "lru", "no_prefetch"};
  std::string cmp_baseline;
  auto* cmp = app.add_subcommand("compare", "Compare policies on one workload");
  cmp_sim.add(cmp, false);
  cmp_out.add(cmp);
  cmp->add_option("--policies", cmp_policies, "Policies to compare")->delimiter(',');
  cmp->add_option("--baseline", cmp_baseline, "Policy the deltas are relative to");

  SimArgs sw_sim;
  OutputArgs sw_out;
  std::string sw_dim = "cache_capacity";
  std::vector<std::string> sw_values;
  std::vector<std::string> sw_policies{"fmoe", "hit_count", "lfu", "lru", "no_prefetch"};
  auto* sw = app.add_subcommand("sweep", "Sweep one configuration dimension");
  sw_sim.add(sw, false);
  sw_out.add(sw);
  sw->add_option("--dimension", sw_dim, "Swept dimension")
      ->check(CLI::IsMember({"cache_capacity", "store_capacity", "prefetch_distance", "batch_size"}));
  sw->add_option("--values", sw_values, "Values; cache_capacity accepts N%")->delimiter(',')->required();
  sw->add_option("--policies", sw_policies, "Policies")->delimiter(',');

  std::string ent_trace;
  int ent_upto = 0;
  OutputArgs ent_out;
  auto* ent = app.add_subcommand("analyze-entropy", "Per-layer fine vs coarse activation entropy");
  ent->add_option("--trace", ent_trace, "Workload directory")->required();
  ent->add_option("--upto", ent_upto, "Iterations aggregated per request (0 = all)");
  ent_out.add(ent);

  int bm_batch = 4, bm_capacity = 1024, bm_hidden = 1024, bm_layers = 32, bm_experts = 8, bm_repeats = 50;
  double bm_limit = 30.0;
  std::uint64_t bm_seed = 1;
  auto* bm = app.add_subcommand("bench-matcher", "Time batched semantic scoring against a full store");
  bm->add_option("--batch", bm_batch, "Queries per scoring call");
  bm->add_option("--capacity", bm_capacity, "Stored contexts");
  bm->add_option("--hidden", bm_hidden, "Embedding width");
  bm->add_option("--layers", bm_layers, "Layers per stored map");
  bm->add_option("--experts", bm_experts, "Experts per layer");
  bm->add_option("--repeats", bm_repeats, "Timed repetitions")->check(CLI::PositiveNumber);
  bm->add_option("--limit-ms", bm_limit, "Fail when any repeat is slower");
  bm->add_option("--seed", bm_seed, "Random seed");

  std::string val_trace;
  auto* val = app.add_subcommand("validate", "Check a workload against its invariants");
  val->add_option("--trace", val_trace, "Workload directory")->required();

  std::string bs_trace, bs_out;
  int bs_capacity = 1024, bs_distance = 3;
  auto* bs = app.add_subcommand("build-store", "Build and export a store from a workload");
  bs->add_option("--trace", bs_trace)->required();
  bs->add_option("--store-capacity", bs_capacity);
  bs->add_option("--prefetch-distance", bs_distance);
  bs->add_option("-o,--out", bs_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      gen_cfg.min_iterations = gen_iters[0];
      gen_cfg.max_iterations = gen_iters[1];
      return cmd_gen(gen_cfg, gen_shape, gen_out);
    }
    if (run->parsed()) return cmd_run(run_sim, run_out, run_events, run_cdf);
    if (cmp->parsed()) return cmd_compare(cmp_sim, cmp_policies, cmp_baseline, cmp_out);
    if (sw->parsed()) return cmd_sweep(sw_sim, sw_dim, sw_values, sw_policies, sw_out);
    if (ent->parsed()) return cmd_entropy(ent_trace, ent_upto, ent_out);
    if (bm->parsed())
      return cmd_bench_matcher(bm_batch, bm_capacity, bm_hidden, bm_layers, bm_experts, bm_repeats, bm_limit, bm_seed);
    if (val->parsed()) return cmd_validate(val_trace);
    if (bs->parsed()) return cmd_build_store(bs_trace, bs_capacity, bs_distance, bs_out);
  } catch (const TraceParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
