#pragma once

#include "json.hpp"
#include "moesim/trace_model.hpp"

namespace moesim::detail {

inline nlohmann::json shape_to_json(const ModelShape& s) {
  nlohmann::json j{{"num_layers", s.num_layers},
                   {"experts_per_layer", s.experts_per_layer},
                   {"top_k", s.top_k},
                   {"hidden_dim", s.hidden_dim},
                   {"expert_size_bytes", s.expert_size_bytes}};
  j["expert_load_time_ms"] = s.expert_load_time_ms ? nlohmann::json(*s.expert_load_time_ms) : nlohmann::json();
  return j;
}

inline ModelShape shape_from_json(const nlohmann::json& j) {
  ModelShape s;
  s.num_layers = j.at("num_layers").get<int>();
  s.experts_per_layer = j.at("experts_per_layer").get<int>();
  s.top_k = j.at("top_k").get<int>();
  s.hidden_dim = j.at("hidden_dim").get<int>();
  s.expert_size_bytes = j.at("expert_size_bytes").get<std::int64_t>();
  if (j.contains("expert_load_time_ms") && !j["expert_load_time_ms"].is_null())
    s.expert_load_time_ms = j["expert_load_time_ms"].get<double>();
  return s;
}

}  // namespace moesim::detail
