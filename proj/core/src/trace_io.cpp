#include "moesim/trace_io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "moesim/error.hpp"
#include "json_floats.hpp"
#include "shape_json.hpp"

namespace moesim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using detail::append_float_array;
using detail::read_float_array;

std::string request_line(const RequestTrace& req, int L) {
  std::string out;
  out += "{\"id\":";
  out += json(req.request_id).dump();
  fmt::format_to(std::back_inserter(out), ",\"arrival_time_ms\":{},\"cluster\":{},\"embedding\":",
                 req.arrival_time_ms, req.cluster);
  append_float_array(out, req.embedding);
  out += ",\"iterations\":[";
  for (std::size_t i = 0; i < req.iterations.size(); ++i) {
    if (i) out.push_back(',');
    out.push_back('[');
    const auto& map = req.iterations[i].map;
    for (int l = 0; l < L; ++l) {
      if (l) out.push_back(',');
      append_float_array(out, map.row(l));
    }
    out.push_back(']');
  }
  out += "]}";
  return out;
}

}  // namespace

void save_workload(const Workload& workload, const fs::path& dir) {
  const auto violations = validate_trace(workload, workload.shape);
  if (!violations.empty())
    throw InvalidArgument("refusing to save invalid workload: " + violations.front().to_string());

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory");

  json meta;
  meta["format_version"] = kTraceFormatVersion;
  meta["shape"] = detail::shape_to_json(workload.shape);
  meta["generator"] = workload.generator_json.empty() ? json() : json::parse(workload.generator_json);
  meta["num_requests"] = workload.requests.size();
  {
    std::ofstream f(dir / "meta.json");
    if (!f) throw IoError((dir / "meta.json").string(), "cannot open for writing");
    f << meta.dump(2) << '\n';
    if (!f) throw IoError((dir / "meta.json").string(), "write failed");
  }
  std::ofstream f(dir / "requests.jsonl");
  if (!f) throw IoError((dir / "requests.jsonl").string(), "cannot open for writing");
  for (const auto& req : workload.requests) f << request_line(req, workload.shape.num_layers) << '\n';
  if (!f) throw IoError((dir / "requests.jsonl").string(), "write failed");
}

Workload load_workload(const fs::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream mf(meta_path);
  if (!mf) throw IoError(meta_path.string(), "cannot open");
  json meta;
  try {
    meta = json::parse(mf);
  } catch (const json::exception& e) {
    throw TraceParseError(fmt::format("{}: {}", meta_path.string(), e.what()), 0, 0, "");
  }

  Workload w;
  try {
    const int version = meta.at("format_version").get<int>();
    if (version != kTraceFormatVersion)
      throw TraceParseError(fmt::format("unsupported trace format version {}", version), 0, 0, "");
    w.shape = detail::shape_from_json(meta.at("shape"));
    if (meta.contains("generator") && !meta["generator"].is_null()) w.generator_json = meta["generator"].dump();
  } catch (const json::exception& e) {
    throw TraceParseError(fmt::format("{}: {}", meta_path.string(), e.what()), 0, 0, "");
  }
  try {
    w.shape.validate();
  } catch (const InvalidArgument& e) {
    throw TraceParseError(fmt::format("{}: {}", meta_path.string(), e.what()), 0, 0, "");
  }

  const int L = w.shape.num_layers;
  const int J = w.shape.experts_per_layer;
  const auto req_path = dir / "requests.jsonl";
  std::ifstream rf(req_path, std::ios::binary);
  if (!rf) throw IoError(req_path.string(), "cannot open");

  std::string line;
  std::int64_t line_no = 0;
  std::int64_t offset = 0;
  std::string last_complete = "<none>";
  while (true) {
    const std::int64_t line_offset = offset;
    if (!std::getline(rf, line)) break;
    ++line_no;
    const bool terminated = !rf.eof();
    offset += static_cast<std::int64_t>(line.size()) + (terminated ? 1 : 0);
    if (line.empty()) continue;

    auto parse_fail = [&](const std::string& why) {
      return TraceParseError(
          fmt::format("{}:{} (byte {}): {}; last complete record: {}", req_path.string(), line_no,
                      line_offset, why, last_complete),
          line_no, line_offset, last_complete);
    };

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw parse_fail(terminated ? e.what() : std::string("truncated record: ") + e.what());
    }

    RequestTrace req;
    try {
      req.request_id = rec.at("id").get<std::string>();
      req.arrival_time_ms = rec.value("arrival_time_ms", 0.0);
      req.cluster = rec.value("cluster", -1);
      req.embedding = read_float_array(rec.at("embedding"));
    } catch (const json::exception& e) {
      throw parse_fail(e.what());
    }
    if (static_cast<int>(req.embedding.size()) != w.shape.hidden_dim)
      throw ShapeMismatchError(
          fmt::format("request {}: embedding has {} values, header declares hidden_dim={}",
                      req.request_id, req.embedding.size(), w.shape.hidden_dim),
          req.request_id, -1, -1);

    const auto* iters = rec.find("iterations") != rec.end() ? &rec["iterations"] : nullptr;
    if (!iters || !iters->is_array()) throw parse_fail("missing iterations array");
    for (std::size_t i = 0; i < iters->size(); ++i) {
      const auto& rows = (*iters)[i];
      const int it = static_cast<int>(i);
      if (!rows.is_array() || static_cast<int>(rows.size()) != L)
        throw ShapeMismatchError(
            fmt::format("request {} iteration {}: {} layers, header declares L={}", req.request_id, it,
                        rows.is_array() ? rows.size() : 0, L),
            req.request_id, it, -1);
      std::vector<float> probs;
      probs.reserve(static_cast<std::size_t>(L) * J);
      for (int l = 0; l < L; ++l) {
        const auto& row = rows[static_cast<std::size_t>(l)];
        if (!row.is_array() || static_cast<int>(row.size()) != J)
          throw ShapeMismatchError(
              fmt::format("request {} iteration {} layer {}: {} entries, header declares J={}",
                          req.request_id, it, l, row.is_array() ? row.size() : 0, J),
              req.request_id, it, l);
        try {
          for (const auto& v : row) probs.push_back(static_cast<float>(v.get<double>()));
        } catch (const json::exception& e) {
          throw parse_fail(e.what());
        }
      }
      req.iterations.push_back(IterationRecord::from_map(it, ExpertMap(L, J, std::move(probs)), w.shape.top_k));
    }
    last_complete = req.request_id;
    w.requests.push_back(std::move(req));
  }
  if (rf.bad()) throw IoError(req_path.string(), "read failed");
  if (meta.contains("num_requests")) {
    const auto expected = meta["num_requests"].get<std::size_t>();
    if (expected != w.requests.size())
      throw TraceParseError(fmt::format("{}: header declares {} requests, found {}; last complete record: {}",
                                        req_path.string(), expected, w.requests.size(), last_complete),
                            line_no, offset, last_complete);
  }
  return w;
}

}  // namespace moesim
