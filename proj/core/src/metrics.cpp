#include "moesim/metrics.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "moesim/error.hpp"

namespace moesim {

namespace {

template <typename T>
double entropy_impl(std::span<const T> dist) {
  double sum = 0.0;
  for (T p : dist) {
    if (p < T(0)) throw InvalidArgument(fmt::format("negative probability {}", static_cast<double>(p)));
    sum += static_cast<double>(p);
  }
  if (!(sum > 0.0)) throw InvalidArgument("entropy of a zero-sum vector");
  double h = 0.0;
  for (T p : dist) {
    const double q = static_cast<double>(p) / sum;
    if (q > 0.0) h -= q * std::log(q);
  }
  return std::max(h, 0.0);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double shannon_entropy(std::span<const double> dist) { return entropy_impl(dist); }
double shannon_entropy(std::span<const float> dist) { return entropy_impl(dist); }

ExpertMap coarse_aggregate(std::span<const IterationRecord> iterations, int upto) {
  if (iterations.empty()) throw InvalidArgument("coarse_aggregate of an empty iteration sequence");
  if (upto < 1) throw InvalidArgument("coarse_aggregate needs upto >= 1");
  const auto& first = iterations.front().map;
  const int L = first.num_layers();
  const int J = first.num_experts();
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(upto), iterations.size());

  std::vector<double> counts(static_cast<std::size_t>(L) * J, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& act = iterations[i].activated;
    for (int l = 0; l < L; ++l)
      for (int e : act[static_cast<std::size_t>(l)]) counts[static_cast<std::size_t>(l) * J + e] += 1.0;
  }
  std::vector<float> probs(counts.size());
  for (int l = 0; l < L; ++l) {
    double total = 0.0;
    for (int j = 0; j < J; ++j) total += counts[static_cast<std::size_t>(l) * J + j];
    for (int j = 0; j < J; ++j) {
      const auto k = static_cast<std::size_t>(l) * J + j;
      probs[k] = total > 0.0 ? static_cast<float>(counts[k] / total) : 1.0f / static_cast<float>(J);
    }
  }
  return ExpertMap(L, J, std::move(probs));
}

std::vector<std::int64_t> activation_counts(const Workload& workload, int upto) {
  const int L = workload.shape.num_layers;
  const int J = workload.shape.experts_per_layer;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(L) * J, 0);
  for (const auto& req : workload.requests) {
    const auto n = upto > 0 ? std::min<std::size_t>(static_cast<std::size_t>(upto), req.iterations.size())
                            : req.iterations.size();
    for (std::size_t i = 0; i < n; ++i)
      for (int l = 0; l < L; ++l)
        for (int e : req.iterations[i].activated[static_cast<std::size_t>(l)])
          ++counts[static_cast<std::size_t>(l) * J + e];
  }
  return counts;
}

EntropyProfile entropy_profile(const Workload& workload, Granularity granularity, int upto_iterations) {
  const int L = workload.shape.num_layers;
  EntropyProfile profile;
  profile.granularity = granularity;
  profile.per_layer_mean_entropy.assign(static_cast<std::size_t>(L), 0.0);
  std::int64_t samples = 0;

  if (granularity == Granularity::fine) {
    for (const auto& req : workload.requests)
      for (const auto& rec : req.iterations) {
        for (int l = 0; l < L; ++l) profile.per_layer_mean_entropy[l] += shannon_entropy(rec.map.row(l));
        ++samples;
      }
  } else {
    for (const auto& req : workload.requests) {
      if (req.iterations.empty()) continue;
      const int upto = upto_iterations > 0 ? upto_iterations : static_cast<int>(req.iterations.size());
      const auto coarse = coarse_aggregate(req.iterations, upto);
      for (int l = 0; l < L; ++l) profile.per_layer_mean_entropy[l] += shannon_entropy(coarse.row(l));
      ++samples;
    }
  }
  if (samples > 0)
    for (double& h : profile.per_layer_mean_entropy) h /= static_cast<double>(samples);
  return profile;
}

double pearson_corr(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("pearson_corr: length mismatch");
  if (xs.size() < 2) throw InvalidArgument("pearson_corr: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedCorrelation("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_corr(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("spearman_corr: length mismatch");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson_corr(rx, ry);
}

}  // namespace moesim
