#include <algorithm>
#include <bit>
#include <map>
#include <limits>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "moesim/error.hpp"
#include "moesim/offload_policy.hpp"

namespace moesim {

std::vector<std::vector<ExpertId>> access_sequence(const Workload& workload) {
  std::vector<std::vector<ExpertId>> groups;
  for (const auto& req : workload.requests)
    for (const auto& rec : req.iterations)
      for (int l = 0; l < static_cast<int>(rec.activated.size()); ++l) {
        std::vector<ExpertId> g;
        for (int e : rec.activated[static_cast<std::size_t>(l)]) g.push_back({l, e});
        std::sort(g.begin(), g.end());
        groups.push_back(std::move(g));
      }
  return groups;
}

namespace {

std::vector<ExpertId> flatten(const std::vector<std::vector<ExpertId>>& groups) {
  std::vector<ExpertId> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

}  // namespace

OracleResult belady_demand_oracle(const Workload& workload, int cache_capacity, double expert_load_ms) {
  if (cache_capacity < 0) throw InvalidArgument("cache capacity must be >= 0");
  const auto seq = flatten(access_sequence(workload));
  const std::size_t n = seq.size();
  constexpr auto never = std::numeric_limits<std::size_t>::max();

  std::vector<std::size_t> next_use(n, never);
  std::map<ExpertId, std::size_t> upcoming;
  for (std::size_t i = n; i-- > 0;) {
    const auto it = upcoming.find(seq[i]);
    next_use[i] = it == upcoming.end() ? never : it->second;
    upcoming[seq[i]] = i;
  }

  OracleResult out;
  out.infeasible = cache_capacity < workload.shape.top_k;
  auto& r = out.report;
  r.policy_name = "belady";
  // Resident experts keyed by (next use, id) so the victim is the last element.
  std::set<std::pair<std::size_t, ExpertId>> by_next;
  std::map<ExpertId, std::size_t> resident;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = seq[i];
    const auto it = resident.find(id);
    if (it != resident.end()) {
      ++r.hits;
      by_next.erase({it->second, id});
    } else {
      ++r.misses;
      if (cache_capacity == 0) continue;
      if (static_cast<int>(resident.size()) >= cache_capacity) {
        // Furthest next use; among never-again entries the lowest id.
        auto victim = std::prev(by_next.end());
        if (victim->first == never) victim = by_next.lower_bound({never, ExpertId{-1, -1}});
        resident.erase(victim->second);
        by_next.erase(victim);
      }
    }
    resident[id] = next_use[i];
    by_next.insert({next_use[i], id});
    r.peak_resident_experts = std::max<std::int64_t>(r.peak_resident_experts, static_cast<std::int64_t>(resident.size()));
  }
  r.total_activations = static_cast<std::int64_t>(n);
  r.expert_hit_rate = n ? static_cast<double>(r.hits) / static_cast<double>(n) : 0.0;
  r.total_stall_ms = expert_load_ms * static_cast<double>(r.misses);
  return out;
}

double brute_force_offline_optimal(const Workload& workload, int cache_capacity, double expert_load_ms) {
  const int L = workload.shape.num_layers;
  const int J = workload.shape.experts_per_layer;
  if (L * J > 12)
    throw InstanceTooLarge(fmt::format("exact search needs L*J <= 12, got {}", L * J));
  if (workload.total_iterations() > 6)
    throw InstanceTooLarge(fmt::format("exact search needs <= 6 iterations, got {}", workload.total_iterations()));
  if (cache_capacity < 0) throw InvalidArgument("cache capacity must be >= 0");

  const auto seq = flatten(access_sequence(workload));
  const int cap = std::min(cache_capacity, L * J);
  std::vector<int> bit(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) bit[i] = seq[i].layer * J + seq[i].expert;

  // memo[(pos, mask)] = fewest misses from pos onwards.
  std::unordered_map<std::uint64_t, int> memo;
  auto solve = [&](auto&& self, std::size_t pos, std::uint32_t mask) -> int {
    if (pos == seq.size()) return 0;
    const std::uint64_t key = (static_cast<std::uint64_t>(pos) << 32) | mask;
    if (const auto it = memo.find(key); it != memo.end()) return it->second;
    const std::uint32_t b = 1u << bit[pos];
    int best;
    if (mask & b) {
      best = self(self, pos + 1, mask);
    } else {
      best = 1 + self(self, pos + 1, mask);  // bypass
      if (cap > 0) {
        if (std::popcount(mask) < cap) {
          best = std::min(best, 1 + self(self, pos + 1, mask | b));
        } else {
          for (std::uint32_t m = mask; m; m &= m - 1) {
            const std::uint32_t v = m & (~m + 1);
            best = std::min(best, 1 + self(self, pos + 1, (mask & ~v) | b));
          }
        }
      }
    }
    memo.emplace(key, best);
    return best;
  };
  return expert_load_ms * static_cast<double>(solve(solve, 0, 0));
}

}  // namespace moesim
