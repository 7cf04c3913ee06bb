#pragma once

#include <string>
#include <vector>

#include "moe_orch/cost_model.hpp"
#include "moe_orch/placement.hpp"
#include "moe_orch/trace.hpp"

namespace moe_orch {

// Tokens routed to each expert of one layer in one step.
struct LayerDemand {
  int layer = 0;
  std::vector<int> n_input;  // indexed by expert id

  // Expert ids with n_input > 0, ascending.
  std::vector<int> active_experts() const;
  bool is_decode_shaped() const;  // every nonzero n_input equals 1
};

LayerDemand demand_from_step(const TraceStep& step, int layer);
std::vector<LayerDemand> demands_from_step(const TraceStep& step);

// paper_faithful prices a slow expert at n_input x slow_ms_per_token and a
// missing fast expert at weight_copy_ms alone; calibrated adds the slow
// intercept and the fast execution time on top of the copy.
enum class CostMode { PaperFaithful, Calibrated };

struct ExpertAssignment {
  std::vector<int> cpu_experts;  // slow device
  std::vector<int> gpu_experts;  // fast device
};

struct ObjectiveValue {
  double slow_sum_ms = 0.0;
  double fast_sum_ms = 0.0;
  double predicted_ms = 0.0;  // max of the two sides
};

// Evaluates the min-max objective for one candidate partition. Throws
// ValidationError unless the assignment exactly partitions the active
// experts of the demand.
ObjectiveValue objective(const LayerDemand& demand,
                         const ExpertAssignment& assignment,
                         const Placement& placement, const CostModel& cost,
                         CostMode mode);

struct LayerPlan {
  int layer = 0;
  std::vector<int> cpu_experts;
  std::vector<int> gpu_experts;
  double slow_sum_ms = 0.0;
  double fast_sum_ms = 0.0;
  double predicted_ms = 0.0;
};

// Maximum active-expert count the exact planner will enumerate (2^k states).
inline constexpr int kExactPlannerLimit = 20;

// Exhaustive argmin over all partitions of the active experts. Ties broken by
// smaller fast_sum, then lexicographically smallest cpu set. Throws
// ValidationError past kExactPlannerLimit active experts.
LayerPlan plan_prefill_exact(const LayerDemand& demand,
                             const Placement& placement, const CostModel& cost,
                             CostMode mode);

// Scalable heuristic: resident experts stay fast; missing experts, largest
// demand first, each go to whichever side keeps the running max smaller.
LayerPlan plan_prefill_greedy(const LayerDemand& demand,
                              const Placement& placement, const CostModel& cost,
                              CostMode mode);

// Decode rule: resident experts run fast, missing experts run slow.
// Throws ValidationError if the demand is not decode-shaped.
LayerPlan plan_decode(const LayerDemand& demand, const Placement& placement,
                      const CostModel& cost);

// `{"layer":l,"cpu":[ids],"gpu":[ids],"predicted_ms":x}`
std::string plan_to_json(const LayerPlan& plan);

}  // namespace moe_orch
