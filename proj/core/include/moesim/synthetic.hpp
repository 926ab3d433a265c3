#pragma once

#include <cstdint>
#include <string>

#include "moesim/trace_model.hpp"

namespace moesim {

/// Parameters of the clustered synthetic workload generator.
///
/// Each cluster owns an embedding centroid and `patterns_per_cluster`
/// archetype expert maps. Every iteration of a request picks one archetype,
/// applies the request's accumulated logit drift, and draws each gate row from
/// a Dirichlet distribution whose total concentration is
/// `dirichlet_concentration`. Archetype rows are themselves drawn from a
/// symmetric Dirichlet with the same per-element concentration, so low values
/// give peaked, predictable rows and high values approach the uniform row.
struct SyntheticConfig {
  ModelShape shape;
  int num_clusters = 8;
  int requests_per_cluster = 8;
  int min_iterations = 8;
  int max_iterations = 24;
  double dirichlet_concentration = 0.1;
  // Norm of the Gaussian noise added to the cluster centroid before
  // normalisation.
  double embedding_noise_sigma = 0.3;
  // Per-iteration standard deviation of the logit random walk.
  double drift_sigma = 0.05;
  int patterns_per_cluster = 4;
  // Spacing of request arrival timestamps; 0 means all arrive at t = 0.
  double inter_arrival_ms = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static SyntheticConfig from_json(const std::string& text);
};

Workload generate_synthetic(const SyntheticConfig& config);

}  // namespace moesim
