#pragma once

#include <cstdint>
#include <string>

namespace moe_orch {

// Layer/expert/dimension geometry of an MoE model.
struct ModelShape {
  int num_layers = 4;
  int experts_per_layer = 8;
  int top_k = 2;
  int hidden_dim = 32;
  int ffn_dim = 64;
  int bytes_per_param = 2;

  // Three projection matrices per expert.
  std::int64_t expert_param_count() const {
    return 3LL * hidden_dim * ffn_dim;
  }
  std::int64_t expert_bytes() const {
    return expert_param_count() * bytes_per_param;
  }
  int total_experts() const { return num_layers * experts_per_layer; }

  // Throws ShapeError on invalid geometry.
  void validate() const;

  // Desk-scale shape used for all dense math.
  static ModelShape toy();
  // Mixtral-8x7B geometry: capacity/latency arithmetic only, never dense math.
  static ModelShape mixtral_8x7b();
  // Parses "toy" or "mixtral"; throws ConfigError otherwise.
  static ModelShape preset(const std::string& name);
};

}  // namespace moe_orch
