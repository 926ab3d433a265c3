#pragma once

#include <filesystem>

#include "moesim/trace_model.hpp"

namespace moesim {

inline constexpr int kTraceFormatVersion = 1;

// A trace is a directory holding meta.json (shape, generator config, format
// version) and requests.jsonl (one request per line). Probabilities and
// embedding values are written as 32-bit floats with 9 significant digits,
// which round-trips every float exactly.
void save_workload(const Workload& workload, const std::filesystem::path& dir);

// Throws IoError, TraceParseError or ShapeMismatchError.
Workload load_workload(const std::filesystem::path& dir);

}  // namespace moesim
