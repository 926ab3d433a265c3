#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "moesim/report.hpp"

namespace moesim {

enum class EventKind {
  run_start,
  step_start,
  layer_start,
  hit,
  miss,
  plan_issued,
  plan_applied,
  transfer_start,
  transfer_abort,
  transfer_complete,
  prefetch_dropped,
  eviction,
  layer_end,
  iteration_end,
  request_end,
};

std::string_view event_kind_name(EventKind kind);
EventKind parse_event_kind(std::string_view name);

/// One timeline event. Fields that do not apply keep their defaults.
///   hit / miss: count = activations served, value = ready time (miss)
///   transfer_*: detail = "prefetch" | "on_demand"
///   transfer_complete: count = resident experts afterwards
///   eviction: detail = "wasted" for a never-used prefetch
///   layer_end: value = stall ms
///   iteration_end: value = step duration ms
///   request_end: value = arrival-to-completion latency ms
struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::run_start;
  std::int64_t step = -1;
  int request = -1;
  int iteration = -1;
  int layer = -1;
  int expert = -1;
  std::int64_t count = 0;
  double value = 0.0;
  std::string detail;

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

using EventSink = std::function<void(const SimEvent&)>;

/// Folds an event stream into a RunReport. The simulator reports through this
/// class, so replaying a log reproduces the report exactly.
class ReportAccumulator {
 public:
  void consume(const SimEvent& e);
  RunReport finish() const;

 private:
  RunReport report_;
  double ttft_sum_ = 0.0;
  std::int64_t ttft_n_ = 0;
  double tpot_sum_ = 0.0;
  std::int64_t tpot_n_ = 0;
};

std::string event_to_json(const SimEvent& e);
SimEvent event_from_json(const std::string& line);

void write_event_log(const std::filesystem::path& path, std::span<const SimEvent> events);
std::vector<SimEvent> read_event_log(const std::filesystem::path& path);

RunReport replay(std::span<const SimEvent> events);

}  // namespace moesim
