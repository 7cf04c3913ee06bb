#include "moe_orch/scheduler.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "moe_orch/error.hpp"

namespace moe_orch {

std::vector<int> LayerDemand::active_experts() const {
  std::vector<int> active;
  for (int e = 0; e < static_cast<int>(n_input.size()); ++e)
    if (n_input[e] > 0) active.push_back(e);
  return active;
}

bool LayerDemand::is_decode_shaped() const {
  for (int n : n_input)
    if (n != 0 && n != 1) return false;
  return true;
}

LayerDemand demand_from_step(const TraceStep& step, int layer) {
  LayerDemand demand;
  demand.layer = layer;
  int max_expert = -1;
  for (const auto& sel : step.layers[layer])
    max_expert = std::max(max_expert, sel.expert);
  demand.n_input.assign(max_expert + 1, 0);
  for (const auto& sel : step.layers[layer])
    demand.n_input[sel.expert] += sel.token_count;
  return demand;
}

std::vector<LayerDemand> demands_from_step(const TraceStep& step) {
  std::vector<LayerDemand> demands;
  demands.reserve(step.layers.size());
  for (int l = 0; l < static_cast<int>(step.layers.size()); ++l)
    demands.push_back(demand_from_step(step, l));
  return demands;
}

namespace {

double slow_expert_cost(int n_tokens, const CostModel& cost, CostMode mode) {
  if (mode == CostMode::PaperFaithful)
    return cost.slow_ms_per_token * n_tokens;
  return cost.slow_cost(n_tokens);
}

double fast_missing_cost(const CostModel& cost, CostMode mode) {
  if (mode == CostMode::PaperFaithful) return cost.weight_copy_ms;
  return cost.weight_copy_ms + cost.fast_exec_ms;
}

}  // namespace

ObjectiveValue objective(const LayerDemand& demand,
                         const ExpertAssignment& assignment,
                         const Placement& placement, const CostModel& cost,
                         CostMode mode) {
  const std::vector<int> active = demand.active_experts();
  std::set<int> covered;
  for (int e : assignment.cpu_experts)
    if (!covered.insert(e).second)
      throw ValidationError("assignment repeats an expert");
  for (int e : assignment.gpu_experts)
    if (!covered.insert(e).second)
      throw ValidationError("assignment repeats an expert");
  if (covered != std::set<int>(active.begin(), active.end()))
    throw ValidationError("assignment must partition exactly the active experts");

  ObjectiveValue value;
  for (int e : assignment.cpu_experts)
    value.slow_sum_ms += slow_expert_cost(demand.n_input[e], cost, mode);
  for (int e : assignment.gpu_experts)
    if (!placement.contains(demand.layer, e))
      value.fast_sum_ms += fast_missing_cost(cost, mode);
  value.predicted_ms = std::max(value.slow_sum_ms, value.fast_sum_ms);
  return value;
}

namespace {

LayerPlan make_plan(const LayerDemand& demand, std::vector<int> cpu,
                    std::vector<int> gpu, const ObjectiveValue& value) {
  std::sort(cpu.begin(), cpu.end());
  std::sort(gpu.begin(), gpu.end());
  return LayerPlan{demand.layer, std::move(cpu), std::move(gpu),
                   value.slow_sum_ms, value.fast_sum_ms, value.predicted_ms};
}

}  // namespace

LayerPlan plan_prefill_exact(const LayerDemand& demand,
                             const Placement& placement, const CostModel& cost,
                             CostMode mode) {
  const std::vector<int> active = demand.active_experts();
  const int k = static_cast<int>(active.size());
  if (k > kExactPlannerLimit)
    throw ValidationError("too many active experts for exact enumeration");

  std::vector<double> slow_cost_of(k), fast_cost_of(k);
  for (int i = 0; i < k; ++i) {
    slow_cost_of[i] = slow_expert_cost(demand.n_input[active[i]], cost, mode);
    fast_cost_of[i] = placement.contains(demand.layer, active[i])
                          ? 0.0
                          : fast_missing_cost(cost, mode);
  }

  // Bit i set => active[i] goes to the slow device.
  ObjectiveValue best;
  std::vector<int> best_cpu, best_gpu;
  bool have_best = false;
  for (std::uint32_t mask = 0; mask < (1u << k); ++mask) {
    double slow_sum = 0.0, fast_sum = 0.0;
    for (int i = 0; i < k; ++i) {
      if (mask & (1u << i))
        slow_sum += slow_cost_of[i];
      else
        fast_sum += fast_cost_of[i];
    }
    const double predicted = std::max(slow_sum, fast_sum);
    std::vector<int> cpu;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) cpu.push_back(active[i]);

    bool better = false;
    if (!have_best || predicted < best.predicted_ms) {
      better = true;
    } else if (predicted == best.predicted_ms) {
      if (fast_sum < best.fast_sum_ms) {
        better = true;
      } else if (fast_sum == best.fast_sum_ms &&
                 std::lexicographical_compare(cpu.begin(), cpu.end(),
                                              best_cpu.begin(), best_cpu.end())) {
        better = true;
      }
    }
    if (better) {
      have_best = true;
      best = ObjectiveValue{slow_sum, fast_sum, predicted};
      best_cpu = std::move(cpu);
      best_gpu.clear();
      for (int i = 0; i < k; ++i)
        if (!(mask & (1u << i))) best_gpu.push_back(active[i]);
    }
  }
  return make_plan(demand, std::move(best_cpu), std::move(best_gpu), best);
}

LayerPlan plan_prefill_greedy(const LayerDemand& demand,
                              const Placement& placement, const CostModel& cost,
                              CostMode mode) {
  const std::vector<int> active = demand.active_experts();
  std::vector<int> cpu, gpu;
  double slow_sum = 0.0, fast_sum = 0.0;

  std::vector<int> missing;
  for (int e : active) {
    if (placement.contains(demand.layer, e))
      gpu.push_back(e);  // resident experts cost nothing in the objective
    else
      missing.push_back(e);
  }
  std::sort(missing.begin(), missing.end(), [&](int a, int b) {
    if (demand.n_input[a] != demand.n_input[b])
      return demand.n_input[a] > demand.n_input[b];
    return a < b;
  });
  for (int e : missing) {
    const double slow_if = slow_sum + slow_expert_cost(demand.n_input[e], cost, mode);
    const double fast_if = fast_sum + fast_missing_cost(cost, mode);
    if (std::max(slow_if, fast_sum) <= std::max(slow_sum, fast_if)) {
      cpu.push_back(e);
      slow_sum = slow_if;
    } else {
      gpu.push_back(e);
      fast_sum = fast_if;
    }
  }
  return make_plan(demand, std::move(cpu), std::move(gpu),
                   ObjectiveValue{slow_sum, fast_sum, std::max(slow_sum, fast_sum)});
}

LayerPlan plan_decode(const LayerDemand& demand, const Placement& placement,
                      const CostModel& cost) {
  if (!demand.is_decode_shaped())
    throw ValidationError("plan_decode requires a decode-shaped demand");
  std::vector<int> cpu, gpu;
  double slow_sum = 0.0;
  for (int e : demand.active_experts()) {
    if (placement.contains(demand.layer, e)) {
      gpu.push_back(e);
    } else {
      cpu.push_back(e);
      slow_sum += cost.slow_cost(1);
    }
  }
  return make_plan(demand, std::move(cpu), std::move(gpu),
                   ObjectiveValue{slow_sum, 0.0, slow_sum});
}

std::string plan_to_json(const LayerPlan& plan) {
  nlohmann::json j = {{"layer", plan.layer},
                      {"cpu", plan.cpu_experts},
                      {"gpu", plan.gpu_experts},
                      {"predicted_ms", plan.predicted_ms}};
  return j.dump();
}

}  // namespace moe_orch
