#include "moesim/synthetic.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "json.hpp"
#include "moesim/error.hpp"
#include "shape_json.hpp"

namespace moesim {

void SyntheticConfig::validate() const {
  shape.validate();
  if (num_clusters < 1) throw InvalidArgument("num_clusters must be >= 1");
  if (requests_per_cluster < 1) throw InvalidArgument("requests_per_cluster must be >= 1");
  if (min_iterations < 1 || max_iterations < min_iterations)
    throw InvalidArgument(fmt::format("invalid iterations range [{}, {}]", min_iterations, max_iterations));
  if (!(dirichlet_concentration > 0.0) || !std::isfinite(dirichlet_concentration))
    throw InvalidArgument("dirichlet_concentration must be positive");
  if (!(embedding_noise_sigma >= 0.0)) throw InvalidArgument("embedding_noise_sigma must be >= 0");
  if (!(drift_sigma >= 0.0)) throw InvalidArgument("drift_sigma must be >= 0");
  if (patterns_per_cluster < 1) throw InvalidArgument("patterns_per_cluster must be >= 1");
  if (!(inter_arrival_ms >= 0.0)) throw InvalidArgument("inter_arrival_ms must be >= 0");
}

std::string SyntheticConfig::to_json() const {
  nlohmann::json j;
  j["shape"] = detail::shape_to_json(shape);
  j["num_clusters"] = num_clusters;
  j["requests_per_cluster"] = requests_per_cluster;
  j["iterations_range"] = {min_iterations, max_iterations};
  j["dirichlet_concentration"] = dirichlet_concentration;
  j["embedding_noise_sigma"] = embedding_noise_sigma;
  j["drift_sigma"] = drift_sigma;
  j["patterns_per_cluster"] = patterns_per_cluster;
  j["inter_arrival_ms"] = inter_arrival_ms;
  j["seed"] = seed;
  return j.dump();
}

SyntheticConfig SyntheticConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SyntheticConfig c;
  c.shape = detail::shape_from_json(j.at("shape"));
  c.num_clusters = j.at("num_clusters").get<int>();
  c.requests_per_cluster = j.at("requests_per_cluster").get<int>();
  c.min_iterations = j.at("iterations_range").at(0).get<int>();
  c.max_iterations = j.at("iterations_range").at(1).get<int>();
  c.dirichlet_concentration = j.at("dirichlet_concentration").get<double>();
  c.embedding_noise_sigma = j.at("embedding_noise_sigma").get<double>();
  c.drift_sigma = j.at("drift_sigma").get<double>();
  c.patterns_per_cluster = j.value("patterns_per_cluster", 4);
  c.inter_arrival_ms = j.value("inter_arrival_ms", 0.0);
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

using Rng = std::mt19937_64;

// Entries smaller than this are jittered so rows never carry exact ties.
constexpr double kJitter = 1e-6;

void sample_dirichlet(Rng& rng, std::span<const double> alpha, std::span<double> out) {
  double sum = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    std::gamma_distribution<double> g(std::max(alpha[j], 1e-300), 1.0);
    out[j] = g(rng);
    sum += out[j];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    // Every draw underflowed; the mass goes to the largest concentration.
    const auto best = static_cast<std::size_t>(
        std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
    std::fill(out.begin(), out.end(), 0.0);
    out[best] = 1.0;
    return;
  }
  for (double& v : out) v /= sum;
}

std::vector<float> to_probability_row(Rng& rng, std::span<const double> raw) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> v(raw.begin(), raw.end());
  double sum = 0.0;
  for (double& x : v) {
    x += kJitter * unif(rng);
    sum += x;
  }
  std::vector<float> row(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) row[j] = static_cast<float>(v[j] / sum);
  return row;
}

std::vector<float> unit_vector(std::vector<double> v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

struct Cluster {
  std::vector<double> centroid;
  // patterns x (L*J) archetype probabilities
  std::vector<std::vector<double>> archetypes;
};

}  // namespace

Workload generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const auto& shape = config.shape;
  const int L = shape.num_layers;
  const int J = shape.experts_per_layer;
  const int h = shape.hidden_dim;
  const double conc = config.dirichlet_concentration;

  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Cluster> clusters(static_cast<std::size_t>(config.num_clusters));
  const std::vector<double> symmetric(static_cast<std::size_t>(J), conc);
  for (auto& c : clusters) {
    std::vector<double> centroid(static_cast<std::size_t>(h));
    for (double& x : centroid) x = normal(rng);
    const auto unit = unit_vector(centroid);
    c.centroid.assign(unit.begin(), unit.end());
    c.archetypes.resize(static_cast<std::size_t>(config.patterns_per_cluster));
    for (auto& arch : c.archetypes) {
      arch.resize(static_cast<std::size_t>(L) * J);
      for (int l = 0; l < L; ++l)
        sample_dirichlet(rng, symmetric, std::span<double>(arch.data() + static_cast<std::size_t>(l) * J, J));
    }
  }

  // Cluster assignment of each request, shuffled so clusters interleave.
  std::vector<int> assignment;
  for (int c = 0; c < config.num_clusters; ++c)
    for (int r = 0; r < config.requests_per_cluster; ++r) assignment.push_back(c);
  std::shuffle(assignment.begin(), assignment.end(), rng);

  Workload w;
  w.shape = shape;
  w.generator_json = config.to_json();
  w.requests.reserve(assignment.size());

  std::uniform_int_distribution<int> iter_count(config.min_iterations, config.max_iterations);
  std::uniform_int_distribution<int> pick_pattern(0, config.patterns_per_cluster - 1);
  std::normal_distribution<double> drift(0.0, config.drift_sigma > 0.0 ? config.drift_sigma : 1.0);
  const double noise_scale = config.embedding_noise_sigma / std::sqrt(static_cast<double>(h));

  std::vector<double> alpha(static_cast<std::size_t>(J));
  std::vector<double> raw(static_cast<std::size_t>(J));
  for (std::size_t n = 0; n < assignment.size(); ++n) {
    const auto& cluster = clusters[static_cast<std::size_t>(assignment[n])];
    RequestTrace req;
    req.request_id = fmt::format("req-{:05d}", n);
    req.cluster = assignment[n];
    req.arrival_time_ms = static_cast<double>(n) * config.inter_arrival_ms;

    std::vector<double> emb(cluster.centroid);
    for (double& x : emb) x += noise_scale * normal(rng);
    req.embedding = unit_vector(std::move(emb));

    const int iterations = iter_count(rng);
    std::vector<double> offset(static_cast<std::size_t>(L) * J, 0.0);
    for (int i = 0; i < iterations; ++i) {
      if (i > 0 && config.drift_sigma > 0.0)
        for (double& o : offset) o += drift(rng);
      const auto& arch = cluster.archetypes[static_cast<std::size_t>(pick_pattern(rng))];
      std::vector<float> probs;
      probs.reserve(static_cast<std::size_t>(L) * J);
      for (int l = 0; l < L; ++l) {
        const auto base = static_cast<std::size_t>(l) * J;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < J; ++j) {
          alpha[j] = std::log(std::max(arch[base + j], 1e-300)) + offset[base + j];
          mx = std::max(mx, alpha[j]);
        }
        double z = 0.0;
        for (int j = 0; j < J; ++j) {
          alpha[j] = std::exp(alpha[j] - mx);
          z += alpha[j];
        }
        for (int j = 0; j < J; ++j) alpha[j] = conc * alpha[j] / z;
        sample_dirichlet(rng, alpha, raw);
        const auto row = to_probability_row(rng, raw);
        probs.insert(probs.end(), row.begin(), row.end());
      }
      req.iterations.push_back(IterationRecord::from_map(i, ExpertMap(L, J, std::move(probs)), shape.top_k));
    }
    w.requests.push_back(std::move(req));
  }
  return w;
}

}  // namespace moesim
