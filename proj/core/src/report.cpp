#include "moesim/report.hpp"

#include <fmt/format.h>

#include "json.hpp"

namespace moesim {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string reports_to_csv(std::span<const RunReport> reports) {
  std::string out =
      "policy,hit_rate,misses,total_stall_ms,ttft_proxy_ms,mean_tpot_proxy_ms,peak_resident_experts,"
      "prefetches_wasted\n";
  for (const auto& r : reports) {
    fmt::format_to(std::back_inserter(out), "{},{},{},{},{},{},{},{}\n", r.policy_name, r.expert_hit_rate,
                   r.misses, r.total_stall_ms, r.ttft_proxy_ms, r.mean_tpot_proxy_ms, r.peak_resident_experts,
                   r.prefetches_wasted);
  }
  return out;
}

std::string reports_to_json(std::span<const RunReport> reports) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json row;
    row["policy"] = r.policy_name;
    row["hit_rate"] = r.expert_hit_rate;
    row["misses"] = r.misses;
    row["total_stall_ms"] = r.total_stall_ms;
    row["ttft_proxy_ms"] = r.ttft_proxy_ms;
    row["mean_tpot_proxy_ms"] = r.mean_tpot_proxy_ms;
    row["peak_resident_experts"] = r.peak_resident_experts;
    row["prefetches_wasted"] = r.prefetches_wasted;
    arr.push_back(std::move(row));
  }
  return arr.dump(2) + "\n";
}

std::string report_to_full_json(const RunReport& r) {
  ordered_json j;
  j["policy"] = r.policy_name;
  j["total_activations"] = r.total_activations;
  j["hits"] = r.hits;
  j["misses"] = r.misses;
  j["expert_hit_rate"] = r.expert_hit_rate;
  j["total_stall_ms"] = r.total_stall_ms;
  j["ttft_proxy_ms"] = r.ttft_proxy_ms;
  j["mean_tpot_proxy_ms"] = r.mean_tpot_proxy_ms;
  j["peak_resident_experts"] = r.peak_resident_experts;
  j["prefetches_issued"] = r.prefetches_issued;
  j["prefetches_wasted"] = r.prefetches_wasted;
  return j.dump(2) + "\n";
}

RunReport report_from_full_json(const std::string& text) {
  const auto j = json::parse(text);
  RunReport r;
  r.policy_name = j.at("policy").get<std::string>();
  r.total_activations = j.at("total_activations").get<std::int64_t>();
  r.hits = j.at("hits").get<std::int64_t>();
  r.misses = j.at("misses").get<std::int64_t>();
  r.expert_hit_rate = j.at("expert_hit_rate").get<double>();
  r.total_stall_ms = j.at("total_stall_ms").get<double>();
  r.ttft_proxy_ms = j.at("ttft_proxy_ms").get<double>();
  r.mean_tpot_proxy_ms = j.at("mean_tpot_proxy_ms").get<double>();
  r.peak_resident_experts = j.at("peak_resident_experts").get<std::int64_t>();
  r.prefetches_issued = j.at("prefetches_issued").get<std::int64_t>();
  r.prefetches_wasted = j.at("prefetches_wasted").get<std::int64_t>();
  return r;
}

}  // namespace moesim
