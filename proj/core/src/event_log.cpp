#include "moesim/event_log.hpp"

#include <array>
#include <fstream>

#include <fmt/format.h>

#include "json.hpp"
#include "moesim/error.hpp"

namespace moesim {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 15> kKindNames{{
    {EventKind::run_start, "run_start"},
    {EventKind::step_start, "step_start"},
    {EventKind::layer_start, "layer_start"},
    {EventKind::hit, "hit"},
    {EventKind::miss, "miss"},
    {EventKind::plan_issued, "plan_issued"},
    {EventKind::plan_applied, "plan_applied"},
    {EventKind::transfer_start, "transfer_start"},
    {EventKind::transfer_abort, "transfer_abort"},
    {EventKind::transfer_complete, "transfer_complete"},
    {EventKind::prefetch_dropped, "prefetch_dropped"},
    {EventKind::eviction, "eviction"},
    {EventKind::layer_end, "layer_end"},
    {EventKind::iteration_end, "iteration_end"},
    {EventKind::request_end, "request_end"},
}};

}  // namespace

std::string_view event_kind_name(EventKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "?";
}

EventKind parse_event_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw InvalidArgument(fmt::format("unknown event kind '{}'", name));
}

void ReportAccumulator::consume(const SimEvent& e) {
  switch (e.kind) {
    case EventKind::run_start:
      report_.policy_name = e.detail;
      break;
    case EventKind::hit:
      report_.hits += e.count;
      break;
    case EventKind::miss:
      report_.misses += e.count;
      break;
    case EventKind::transfer_start:
      if (e.detail == "prefetch") ++report_.prefetches_issued;
      break;
    case EventKind::transfer_complete:
      report_.peak_resident_experts = std::max(report_.peak_resident_experts, e.count);
      break;
    case EventKind::eviction:
      if (e.detail == "wasted") ++report_.prefetches_wasted;
      break;
    case EventKind::layer_end:
      report_.total_stall_ms += e.value;
      break;
    case EventKind::iteration_end:
      if (e.iteration == 0) {
        ttft_sum_ += e.value;
        ++ttft_n_;
      } else {
        tpot_sum_ += e.value;
        ++tpot_n_;
      }
      break;
    default:
      break;
  }
}

RunReport ReportAccumulator::finish() const {
  RunReport r = report_;
  r.total_activations = r.hits + r.misses;
  r.expert_hit_rate = r.total_activations ? static_cast<double>(r.hits) / static_cast<double>(r.total_activations) : 0.0;
  r.ttft_proxy_ms = ttft_n_ ? ttft_sum_ / static_cast<double>(ttft_n_) : 0.0;
  r.mean_tpot_proxy_ms = tpot_n_ ? tpot_sum_ / static_cast<double>(tpot_n_) : 0.0;
  return r;
}

std::string event_to_json(const SimEvent& e) {
  ordered_json j;
  j["t"] = e.time;
  j["kind"] = event_kind_name(e.kind);
  if (e.step >= 0) j["step"] = e.step;
  if (e.request >= 0) j["request"] = e.request;
  if (e.iteration >= 0) j["iteration"] = e.iteration;
  if (e.layer >= 0) j["layer"] = e.layer;
  if (e.expert >= 0) j["expert"] = e.expert;
  if (e.count != 0) j["count"] = e.count;
  if (e.value != 0.0) j["value"] = e.value;
  if (!e.detail.empty()) j["detail"] = e.detail;
  return j.dump();
}

SimEvent event_from_json(const std::string& line) {
  const auto j = json::parse(line);
  SimEvent e;
  e.time = j.at("t").get<double>();
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  e.step = j.value("step", std::int64_t{-1});
  e.request = j.value("request", -1);
  e.iteration = j.value("iteration", -1);
  e.layer = j.value("layer", -1);
  e.expert = j.value("expert", -1);
  e.count = j.value("count", std::int64_t{0});
  e.value = j.value("value", 0.0);
  e.detail = j.value("detail", std::string());
  return e;
}

void write_event_log(const std::filesystem::path& path, std::span<const SimEvent> events) {
  std::ofstream f(path);
  if (!f) throw IoError(path.string(), "cannot open for writing");
  for (const auto& e : events) f << event_to_json(e) << '\n';
  if (!f) throw IoError(path.string(), "write failed");
}

std::vector<SimEvent> read_event_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path.string(), "cannot open");
  std::vector<SimEvent> out;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t offset = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto line_offset = offset;
    offset += static_cast<std::int64_t>(line.size()) + 1;
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(line));
    } catch (const json::exception& e) {
      throw TraceParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no, line_offset,
                            fmt::format("event {}", out.size()));
    }
  }
  return out;
}

RunReport replay(std::span<const SimEvent> events) {
  ReportAccumulator acc;
  for (const auto& e : events) acc.consume(e);
  return acc.finish();
}

}  // namespace moesim
