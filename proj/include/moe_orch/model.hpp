#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "moe_orch/shape.hpp"
#include "moe_orch/trace.hpp"

namespace moe_orch {

// Dense row-major matrix. Sized for toy geometries only.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Gated FFN expert: out = w_out * (silu(w_in * x) .* (w_gate * x)).
struct ExpertWeights {
  Matrix w_in;    // [ffn_dim x hidden_dim]
  Matrix w_gate;  // [ffn_dim x hidden_dim]
  Matrix w_out;   // [hidden_dim x ffn_dim]

  friend bool operator==(const ExpertWeights&, const ExpertWeights&) = default;
};

// Per-layer router: [experts_per_layer x hidden_dim] logit map.
struct RouterWeights {
  std::vector<Matrix> layers;

  friend bool operator==(const RouterWeights&, const RouterWeights&) = default;
};

struct ModelWeights {
  std::vector<std::vector<ExpertWeights>> experts;  // [layer][expert]
  RouterWeights router;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Deterministic random initialization (N(0, 1/sqrt(hidden_dim)) entries).
ModelWeights random_model(const ModelShape& shape, std::uint64_t seed);

// Throws ShapeError on dimension mismatch.
std::vector<double> expert_ffn(const ExpertWeights& weights,
                               const std::vector<double>& x);

// Top-k experts by router logit, ties broken by lower expert id. Gate
// weights are the softmax over the selected logits only, summing to 1.
std::vector<std::pair<int, double>> gate_topk(const RouterWeights& router,
                                              int layer,
                                              const std::vector<double>& x,
                                              int top_k);

struct ForwardResult {
  std::vector<std::vector<double>> outputs;  // one vector per token
  RoutingTrace trace;                        // single prefill step
};

// Receives every post-SiLU activation value (one call per expert invocation).
using ActivationSink = void (*)(int layer, const std::vector<double>& values,
                                void* ctx);

// Applies num_layers MoE layers with residual connections. The output never
// depends on any placement or scheduling policy.
ForwardResult model_forward(const ModelShape& shape, const ModelWeights& weights,
                            const std::vector<std::vector<double>>& tokens,
                            ActivationSink sink = nullptr, void* sink_ctx = nullptr);

// One prefill step of input_len tokens followed by output_len decode steps.
// Expert choice is sampled from a skew-parameterized categorical distribution
// per layer (skew=0 is uniform). Deterministic given seed.
RoutingTrace synth_trace(const ModelShape& shape, double popularity_skew,
                         int input_len, int output_len, std::uint64_t seed);

}  // namespace moe_orch
