#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace moesim {

/// Per-policy accounting of one simulated (or oracle) run.
struct RunReport {
  std::string policy_name;
  std::int64_t total_activations = 0;
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  double expert_hit_rate = 0.0;
  double total_stall_ms = 0.0;
  double ttft_proxy_ms = 0.0;
  double mean_tpot_proxy_ms = 0.0;
  std::int64_t peak_resident_experts = 0;
  std::int64_t prefetches_issued = 0;
  std::int64_t prefetches_wasted = 0;

  // Stall-only part of the on-demand latency objective, T = T_e * misses when
  // every miss pays a full transfer.
  double on_demand_latency_ms(double expert_load_ms) const { return expert_load_ms * static_cast<double>(misses); }

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

// The comparison table: one row per policy with columns
// policy, hit_rate, misses, total_stall_ms, ttft_proxy_ms, mean_tpot_proxy_ms,
// peak_resident_experts, prefetches_wasted.
std::string reports_to_csv(std::span<const RunReport> reports);
std::string reports_to_json(std::span<const RunReport> reports);

// Every field, for single-run output and replay checks.
std::string report_to_full_json(const RunReport& report);
RunReport report_from_full_json(const std::string& text);

}  // namespace moesim
