#pragma once

#include <span>
#include <vector>

#include "moesim/trace_model.hpp"

namespace moesim {

enum class Granularity { fine, coarse };

struct EntropyProfile {
  std::vector<double> per_layer_mean_entropy;  // nats
  Granularity granularity = Granularity::fine;
};

/// Shannon entropy in nats of a probability vector. The input is renormalised
/// to sum to one; 0 * ln 0 is taken as 0. Throws InvalidArgument on a
/// negative entry or a zero-sum vector.
double shannon_entropy(std::span<const double> dist);
double shannon_entropy(std::span<const float> dist);

/// Request-level pattern: per layer, the top-K activation counts over the
/// first `upto` iterations, normalised to a probability row. `upto` larger
/// than the sequence is clamped to its length.
ExpertMap coarse_aggregate(std::span<const IterationRecord> iterations, int upto);

// Raw top-K activation counts per (layer, expert) over the first `upto`
// iterations of every request. Row-major L x J.
std::vector<std::int64_t> activation_counts(const Workload& workload, int upto);

/// fine: mean over all iterations of the per-row gate entropy.
/// coarse: mean over requests of the entropy of coarse_aggregate(request, upto).
/// `upto` only affects the coarse profile; values <= 0 mean "all iterations".
EntropyProfile entropy_profile(const Workload& workload, Granularity granularity, int upto_iterations);

/// Sample Pearson correlation. Throws InvalidArgument on length mismatch or
/// fewer than two points, UndefinedCorrelation when either side is constant.
double pearson_corr(std::span<const double> xs, std::span<const double> ys);

/// Spearman rank correlation (Pearson over average ranks).
double spearman_corr(std::span<const double> xs, std::span<const double> ys);

}  // namespace moesim
