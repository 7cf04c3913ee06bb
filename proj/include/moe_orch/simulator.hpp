#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moe_orch/cost_model.hpp"
#include "moe_orch/placement.hpp"
#include "moe_orch/scheduler.hpp"
#include "moe_orch/shape.hpp"
#include "moe_orch/trace.hpp"

namespace moe_orch {

enum class Policy { Fiddler, ExpertCopyOffload, FullStreamOffload };

std::string to_string(Policy policy);
Policy policy_from_string(const std::string& s);

// End-to-end latency replay of one generation.
struct SimReport {
  int input_len = 0;
  int output_len = 0;
  double prefill_ms = 0.0;
  double decode_ms = 0.0;
  double tokens_per_second = 0.0;
  std::vector<double> step_latencies_ms;

  friend bool operator==(const SimReport&, const SimReport&) = default;
};

// Latency of one step (all layers) under a policy. Fast and slow sides run
// in parallel within a layer; layers are sequential.
double simulate_step(const std::vector<LayerDemand>& layer_demands,
                     StepKind kind, const Placement& placement,
                     const CostModel& cost, Policy policy);

// Replays every step of the trace. Throws ValidationError on an empty trace
// or when the trace generates no output tokens (tokens/sec undefined).
// With transient_copies=false, experts the Fiddler policy copies to the fast
// device are adopted into the resident set, evicting the least recently used
// resident once the capacity bound is hit.
SimReport simulate_generation(const RoutingTrace& trace, const Placement& placement,
                              const CostModel& cost, Policy policy,
                              bool transient_copies = true);

struct GridConfigResult {
  int input_len = 0;
  int output_len = 0;
  std::vector<SimReport> reports;  // one per policy, same order as policies
};

struct PolicySpeedup {
  Policy numerator;
  Policy denominator;
  double mean_ratio = 0.0;  // mean over configs of tps_num / tps_den
};

struct GridSummary {
  std::vector<int> input_lens;
  std::vector<int> output_lens;
  std::vector<Policy> policies;
  std::vector<GridConfigResult> configs;  // input-major order
  std::vector<double> average_tps;        // per policy
  std::vector<PolicySpeedup> speedups;    // all ordered pairs
  // amortization[p][i]: tokens/sec non-decreasing in output length for
  // policy p at input_lens[i].
  std::vector<std::vector<bool>> amortization_monotone;
};

// Simulates every policy on the same per-config synthetic trace (seed-fixed,
// uniform routing). Configs may run concurrently; results are
// order-independent.
GridSummary run_grid(const ModelShape& shape, const Placement& placement,
                     const CostModel& cost, const std::vector<Policy>& policies,
                     std::uint64_t seed,
                     const std::vector<int>& input_lens = {16, 32, 64, 128},
                     const std::vector<int>& output_lens = {16, 32, 64, 128, 256, 512},
                     bool parallel = false);

// CSV `policy,input_len,output_len,prefill_ms,decode_ms,tokens_per_second`.
void save_grid_csv(const GridSummary& summary, const std::string& path);
// JSON summary: averages, pairwise speedups, amortization checks, and a note
// that baseline policies are abstract latency models without caching or
// prefetching.
void save_grid_summary_json(const GridSummary& summary, const std::string& path);

}  // namespace moe_orch
