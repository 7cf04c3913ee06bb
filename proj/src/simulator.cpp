#include "moe_orch/simulator.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moe_orch/error.hpp"
#include "moe_orch/model.hpp"

namespace moe_orch {

using nlohmann::json;

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::Fiddler: return "fiddler";
    case Policy::ExpertCopyOffload: return "expertcopy";
    case Policy::FullStreamOffload: return "fullstream";
  }
  return "?";
}

Policy policy_from_string(const std::string& s) {
  if (s == "fiddler") return Policy::Fiddler;
  if (s == "expertcopy") return Policy::ExpertCopyOffload;
  if (s == "fullstream") return Policy::FullStreamOffload;
  throw ConfigError("unknown policy: " + s);
}

namespace {

// Mutable residency for the LRU-adoption variant; with adopt_copies=false it
// just wraps the fixed placement.
struct ResidencyState {
  Placement placement;
  bool adopt_copies = false;
  std::vector<std::pair<int, int>> lru;  // most recently used last

  explicit ResidencyState(const Placement& initial, bool adopt)
      : placement(initial), adopt_copies(adopt) {
    lru.assign(placement.resident.begin(), placement.resident.end());
  }

  void touch(int layer, int expert) {
    if (!adopt_copies) return;
    const std::pair<int, int> key{layer, expert};
    if (auto it = std::find(lru.begin(), lru.end(), key); it != lru.end())
      lru.erase(it);
    lru.push_back(key);
  }

  void adopt(int layer, int expert) {
    if (!adopt_copies) return;
    if (placement.resident.insert({layer, expert}).second)
      lru.push_back({layer, expert});
    while (static_cast<int>(placement.resident.size()) > placement.capacity &&
           !lru.empty()) {
      placement.resident.erase(lru.front());
      lru.erase(lru.begin());
    }
  }
};

double fiddler_layer_latency(const LayerDemand& demand, StepKind kind,
                             ResidencyState& state, const CostModel& cost) {
  const LayerPlan plan =
      kind == StepKind::Decode
          ? plan_decode(demand, state.placement, cost)
          : plan_prefill_exact(demand, state.placement, cost,
                               CostMode::Calibrated);

  double slow_side = 0.0;
  for (int e : plan.cpu_experts) slow_side += cost.slow_cost(demand.n_input[e]);
  if (!plan.cpu_experts.empty()) slow_side += 2.0 * cost.activation_copy_ms;

  double fast_side = 0.0;
  for (int e : plan.gpu_experts) {
    fast_side += cost.fast_exec_ms;
    if (state.placement.contains(demand.layer, e)) {
      state.touch(demand.layer, e);
    } else {
      fast_side += cost.weight_copy_ms;
      state.adopt(demand.layer, e);
    }
  }
  return std::max(slow_side, fast_side);
}

double simulate_step_impl(const std::vector<LayerDemand>& layer_demands,
                          StepKind kind, ResidencyState& state,
                          const CostModel& cost, Policy policy) {
  cost.validate();
  const Placement& placement = state.placement;
  double total = 0.0;
  for (const auto& demand : layer_demands) {
    double layer_ms = 0.0;
    switch (policy) {
      case Policy::Fiddler:
        layer_ms = fiddler_layer_latency(demand, kind, state, cost);
        break;
      case Policy::ExpertCopyOffload:
        for (int e : demand.active_experts()) {
          layer_ms += cost.fast_exec_ms;
          if (!placement.contains(demand.layer, e))
            layer_ms += cost.weight_copy_ms;
        }
        break;
      case Policy::FullStreamOffload:
        for (int e : demand.active_experts()) {
          (void)e;
          layer_ms += cost.weight_copy_ms + cost.fast_exec_ms;
        }
        break;
    }
    total += layer_ms + cost.nonexpert_ms_per_step;
  }
  return total;
}

}  // namespace

double simulate_step(const std::vector<LayerDemand>& layer_demands,
                     StepKind kind, const Placement& placement,
                     const CostModel& cost, Policy policy) {
  ResidencyState state(placement, /*adopt=*/false);
  return simulate_step_impl(layer_demands, kind, state, cost, policy);
}

SimReport simulate_generation(const RoutingTrace& trace, const Placement& placement,
                              const CostModel& cost, Policy policy,
                              bool transient_copies) {
  if (trace.steps.empty()) throw ValidationError("cannot simulate an empty trace");
  if (trace.steps[0].kind != StepKind::Prefill)
    throw ValidationError("trace must start with a prefill step");

  ResidencyState state(placement, /*adopt=*/!transient_copies);
  SimReport report;
  int top_k_guess = 1;  // only used for prefill token counting below
  for (const auto& step : trace.steps) {
    const auto demands = demands_from_step(step);
    const double ms = simulate_step_impl(demands, step.kind, state, cost, policy);
    report.step_latencies_ms.push_back(ms);
    if (step.kind == StepKind::Prefill) {
      report.prefill_ms += ms;
    } else {
      report.decode_ms += ms;
      report.output_len += 1;
      if (!step.layers.empty())
        top_k_guess = static_cast<int>(step.layers[0].size());
    }
  }
  {
    const auto& first = trace.steps[0];
    std::int64_t total = 0;
    for (const auto& sel : first.layers.empty() ? std::vector<Selection>{}
                                                : first.layers[0])
      total += sel.token_count;
    report.input_len = static_cast<int>(total / std::max(1, top_k_guess));
  }
  if (report.output_len == 0)
    throw ValidationError("tokens/sec undefined: trace generates no output tokens");
  report.tokens_per_second =
      report.output_len / ((report.prefill_ms + report.decode_ms) / 1000.0);
  return report;
}

namespace {

std::uint64_t config_seed(std::uint64_t base, int input_len, int output_len) {
  std::uint64_t h = base ^ 0x51cbd1f9u;
  h = h * 1000003ULL + static_cast<std::uint64_t>(input_len);
  h = h * 1000003ULL + static_cast<std::uint64_t>(output_len);
  return h;
}

GridConfigResult run_config(const ModelShape& shape, const Placement& placement,
                            const CostModel& cost,
                            const std::vector<Policy>& policies,
                            std::uint64_t seed, int input_len, int output_len) {
  GridConfigResult result;
  result.input_len = input_len;
  result.output_len = output_len;
  const RoutingTrace trace = synth_trace(
      shape, 0.0, input_len, output_len, config_seed(seed, input_len, output_len));
  for (Policy policy : policies) {
    SimReport report = simulate_generation(trace, placement, cost, policy);
    report.input_len = input_len;
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace

GridSummary run_grid(const ModelShape& shape, const Placement& placement,
                     const CostModel& cost, const std::vector<Policy>& policies,
                     std::uint64_t seed, const std::vector<int>& input_lens,
                     const std::vector<int>& output_lens, bool parallel) {
  if (policies.empty()) throw ConfigError("run_grid needs at least one policy");
  if (input_lens.empty() || output_lens.empty())
    throw ConfigError("grid lists must be non-empty");

  GridSummary summary;
  summary.input_lens = input_lens;
  summary.output_lens = output_lens;
  summary.policies = policies;

  std::vector<std::pair<int, int>> configs;
  for (int in : input_lens)
    for (int out : output_lens) configs.emplace_back(in, out);

  summary.configs.resize(configs.size());
  if (parallel) {
    std::vector<std::future<GridConfigResult>> futures;
    futures.reserve(configs.size());
    for (const auto& [in, out] : configs)
      futures.push_back(std::async(std::launch::async, run_config, shape,
                                   placement, cost, policies, seed, in, out));
    for (size_t i = 0; i < futures.size(); ++i)
      summary.configs[i] = futures[i].get();
  } else {
    for (size_t i = 0; i < configs.size(); ++i)
      summary.configs[i] = run_config(shape, placement, cost, policies, seed,
                                      configs[i].first, configs[i].second);
  }

  const size_t np = policies.size();
  summary.average_tps.assign(np, 0.0);
  for (const auto& cfg : summary.configs)
    for (size_t p = 0; p < np; ++p)
      summary.average_tps[p] += cfg.reports[p].tokens_per_second;
  for (auto& v : summary.average_tps) v /= static_cast<double>(summary.configs.size());

  for (size_t a = 0; a < np; ++a) {
    for (size_t b = 0; b < np; ++b) {
      if (a == b) continue;
      double ratio_sum = 0.0;
      for (const auto& cfg : summary.configs)
        ratio_sum += cfg.reports[a].tokens_per_second /
                     cfg.reports[b].tokens_per_second;
      summary.speedups.push_back(PolicySpeedup{
          policies[a], policies[b],
          ratio_sum / static_cast<double>(summary.configs.size())});
    }
  }

  summary.amortization_monotone.assign(np,
                                       std::vector<bool>(input_lens.size(), true));
  const size_t n_out = output_lens.size();
  for (size_t p = 0; p < np; ++p) {
    for (size_t i = 0; i < input_lens.size(); ++i) {
      for (size_t o = 1; o < n_out; ++o) {
        const double prev =
            summary.configs[i * n_out + o - 1].reports[p].tokens_per_second;
        const double cur =
            summary.configs[i * n_out + o].reports[p].tokens_per_second;
        if (cur < prev) summary.amortization_monotone[p][i] = false;
      }
    }
  }
  return summary;
}

void save_grid_csv(const GridSummary& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open report CSV for writing: " + path);
  out << "policy,input_len,output_len,prefill_ms,decode_ms,tokens_per_second\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& cfg : summary.configs) {
    for (size_t p = 0; p < summary.policies.size(); ++p) {
      const auto& r = cfg.reports[p];
      out << to_string(summary.policies[p]) << ',' << cfg.input_len << ','
          << cfg.output_len << ',' << r.prefill_ms << ',' << r.decode_ms << ','
          << r.tokens_per_second << '\n';
    }
  }
}

void save_grid_summary_json(const GridSummary& summary, const std::string& path) {
  json j;
  j["note"] =
      "Baseline policies are abstract latency models without the caching or "
      "prefetching of the systems they stand in for; speedups are "
      "upper-bound-flavored.";
  json policies = json::array();
  for (size_t p = 0; p < summary.policies.size(); ++p) {
    policies.push_back({{"policy", to_string(summary.policies[p])},
                        {"average_tokens_per_second", summary.average_tps[p]}});
  }
  j["policies"] = std::move(policies);
  json speedups = json::array();
  for (const auto& s : summary.speedups) {
    speedups.push_back({{"numerator", to_string(s.numerator)},
                        {"denominator", to_string(s.denominator)},
                        {"mean_ratio", s.mean_ratio}});
  }
  j["speedups"] = std::move(speedups);
  json amortization = json::array();
  for (size_t p = 0; p < summary.policies.size(); ++p) {
    json per_input = json::array();
    for (size_t i = 0; i < summary.input_lens.size(); ++i) {
      per_input.push_back(
          {{"input_len", summary.input_lens[i]},
           {"tokens_per_second_non_decreasing",
            static_cast<bool>(summary.amortization_monotone[p][i])}});
    }
    amortization.push_back(
        {{"policy", to_string(summary.policies[p])}, {"checks", per_input}});
  }
  j["amortization"] = std::move(amortization);

  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open summary JSON for writing: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace moe_orch
