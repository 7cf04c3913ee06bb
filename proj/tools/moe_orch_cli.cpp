// Command-line front end: calibrate -> profile -> place -> plan -> simulate
// -> report. Exit codes: 0 success, 1 usage/config error, 2 data/validation
// error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moe_orch/cost_model.hpp"
#include "moe_orch/error.hpp"
#include "moe_orch/model.hpp"
#include "moe_orch/placement.hpp"
#include "moe_orch/scheduler.hpp"
#include "moe_orch/simulator.hpp"

namespace {

using namespace moe_orch;

struct ShapeFlags {
  std::string preset = "toy";
  int num_layers = -1;
  int experts_per_layer = -1;
  int top_k = -1;

  ModelShape resolve() const {
    ModelShape shape = ModelShape::preset(preset);
    if (num_layers > 0) shape.num_layers = num_layers;
    if (experts_per_layer > 0) shape.experts_per_layer = experts_per_layer;
    if (top_k > 0) shape.top_k = top_k;
    try {
      shape.validate();
    } catch (const ShapeError& e) {
      throw ConfigError(e.what());
    }
    return shape;
  }
};

void add_shape_flags(CLI::App* cmd, ShapeFlags& flags) {
  cmd->add_option("--preset", flags.preset, "Shape preset: toy or mixtral")
      ->capture_default_str();
  cmd->add_option("--layers", flags.num_layers, "Override layer count");
  cmd->add_option("--experts", flags.experts_per_layer,
                  "Override experts per layer");
  cmd->add_option("--topk", flags.top_k, "Override top-k");
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("MOE_ORCH_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

CostModel load_cost_or_default(const std::string& path) {
  if (path.empty()) return CostModel::default_calibration();
  return load_cost_model_json(path);
}

void print_decode_verdict(const CostModel& cost) {
  if (cost.decode_assumption_check()) {
    std::cout << "decode assumption holds: slow-device execution beats the "
                 "weight copy for single tokens\n";
  } else {
    std::cout << "warning: decode assumption violated: slow_cost(1) + 2 x "
                 "activation copy >= weight copy + fast exec\n";
  }
}

int cmd_calibrate(const std::string& records_path, const std::string& out_path,
                  double nonexpert_ms) {
  const auto records = load_records_csv(records_path);
  CostModel cost;
  try {
    cost = fit(records, nonexpert_ms);
  } catch (const CalibrationError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  save_cost_model_json(cost, out_path);
  print_decode_verdict(cost);
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

int cmd_profile(const ShapeFlags& shape_flags, const std::string& trace_path,
                const std::string& out_path) {
  const ModelShape shape = shape_flags.resolve();
  const RoutingTrace trace = load_trace_jsonl(trace_path, shape);
  const PopularityProfile profile = profile_from_trace(trace, shape);
  save_profile_csv(profile, out_path);
  const ProfileStats stats = profile_stats(profile);
  std::cout << "max-normalized popularity: mean=" << stats.mean
            << " std=" << stats.stddev << " p25=" << stats.p25
            << " p75=" << stats.p75 << " min=" << stats.min << '\n';
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

int cmd_place(const std::string& profile_path, int capacity,
              bool per_layer_quota, const std::string& out_path) {
  const PopularityProfile profile = load_profile_csv(profile_path);
  if (capacity > profile.total_experts())
    throw ConfigError("capacity exceeds total expert count");
  const Placement placement = greedy_place(profile, capacity, per_layer_quota);
  save_placement_csv(placement, out_path);
  const HitRateBounds bounds = hit_rate_bounds(profile, capacity);
  std::cout << "expected hit rate: " << expected_hit_rate(placement, profile)
            << " (best=" << bounds.best << " worst=" << bounds.worst
            << " random=" << bounds.random << ")\n";
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

int cmd_plan(const ShapeFlags& shape_flags, const std::string& trace_path,
             const std::string& placement_path, const std::string& cost_path,
             const std::string& mode_name, const std::string& dump_path) {
  const ModelShape shape = shape_flags.resolve();
  const RoutingTrace trace = load_trace_jsonl(trace_path, shape);
  const Placement placement = load_placement_csv(placement_path);
  const CostModel cost = load_cost_or_default(cost_path);
  const CostMode mode = mode_name == "calibrated" ? CostMode::Calibrated
                                                  : CostMode::PaperFaithful;

  std::ofstream dump;
  if (!dump_path.empty()) {
    dump.open(dump_path);
    if (!dump) throw ValidationError("cannot open plan dump: " + dump_path);
  }
  double total_ms = 0.0;
  for (const auto& step : trace.steps) {
    for (const auto& demand : demands_from_step(step)) {
      const LayerPlan plan =
          step.kind == StepKind::Decode
              ? plan_decode(demand, placement, cost)
              : plan_prefill_exact(demand, placement, cost, mode);
      total_ms += plan.predicted_ms;
      if (dump.is_open()) dump << plan_to_json(plan) << '\n';
    }
  }
  std::cout << "planned " << trace.steps.size()
            << " steps, total predicted expert time " << total_ms << " ms\n";
  return 0;
}

int cmd_simulate(const ShapeFlags& shape_flags, const std::string& trace_path,
                 const std::string& placement_path, const std::string& cost_path,
                 const std::string& policy_name, bool transient_copies) {
  const ModelShape shape = shape_flags.resolve();
  const RoutingTrace trace = load_trace_jsonl(trace_path, shape);
  const Placement placement = placement_path.empty()
                                  ? Placement{}
                                  : load_placement_csv(placement_path);
  const CostModel cost = load_cost_or_default(cost_path);
  const Policy policy = policy_from_string(policy_name);
  const SimReport report =
      simulate_generation(trace, placement, cost, policy, transient_copies);
  std::cout << to_string(policy) << ": input_len=" << report.input_len
            << " output_len=" << report.output_len
            << " prefill_ms=" << report.prefill_ms
            << " decode_ms=" << report.decode_ms
            << " tokens_per_second=" << report.tokens_per_second << '\n';
  return 0;
}

int cmd_run(const ShapeFlags& shape_flags, int capacity,
            const std::string& cost_path, std::uint64_t seed, double skew,
            const std::vector<int>& inputs, const std::vector<int>& outputs,
            const std::vector<std::string>& policy_names,
            const std::string& outdir, bool per_layer_quota, bool parallel) {
  const ModelShape shape = shape_flags.resolve();
  if (capacity < 0 || capacity > shape.total_experts())
    throw ConfigError("capacity must lie in [0, total experts]");
  if (inputs.empty() || outputs.empty())
    throw ConfigError("grid lists must be non-empty");

  std::vector<Policy> policies;
  for (const auto& name : policy_names)
    policies.push_back(policy_from_string(name));

  const CostModel cost = load_cost_or_default(cost_path);
  print_decode_verdict(cost);

  // Calibration trace uses a different seed than every evaluation trace.
  const RoutingTrace calibration =
      synth_trace(shape, skew, 256, 256, seed + 0x5eed);
  const PopularityProfile profile = profile_from_trace(calibration, shape);
  const Placement placement = greedy_place(profile, capacity, per_layer_quota);
  std::cout << "placed " << placement.resident.size() << "/"
            << shape.total_experts()
            << " experts, expected hit rate "
            << expected_hit_rate(placement, profile) << '\n';

  const GridSummary summary =
      run_grid(shape, placement, cost, policies, seed, inputs, outputs, parallel);

  std::filesystem::create_directories(outdir);
  const std::string csv_path = outdir + "/grid.csv";
  const std::string json_path = outdir + "/summary.json";
  save_grid_csv(summary, csv_path);
  save_grid_summary_json(summary, json_path);
  for (size_t p = 0; p < policies.size(); ++p)
    std::cout << to_string(policies[p])
              << " average tokens/sec: " << summary.average_tps[p] << '\n';
  for (const auto& s : summary.speedups)
    std::cout << to_string(s.numerator) << " over " << to_string(s.denominator)
              << ": " << s.mean_ratio << "x\n";
  std::cout << "wrote " << csv_path << " and " << json_path << '\n';
  return 0;
}

struct ActivationCollector {
  std::vector<std::vector<double>> per_layer;

  static void record(int layer, const std::vector<double>& values, void* ctx) {
    auto* self = static_cast<ActivationCollector*>(ctx);
    auto& bucket = self->per_layer[layer];
    bucket.insert(bucket.end(), values.begin(), values.end());
  }
};

std::string threshold_label(double t) {
  std::ostringstream label;
  label << "lt_";
  if (t == std::floor(t))
    label << std::fixed << std::setprecision(1) << t;
  else
    label << t;
  return label.str();
}

int cmd_sparsity(const ShapeFlags& shape_flags, std::uint64_t seed, int n_tokens,
                 const std::vector<double>& thresholds, bool zero_weights,
                 const std::string& out_path) {
  const ModelShape shape = shape_flags.resolve();
  if (n_tokens < 1) throw ConfigError("token count must be >= 1");

  ModelWeights model = random_model(shape, seed);
  if (zero_weights) {
    for (auto& layer : model.experts)
      for (auto& expert : layer)
        for (auto* m : {&expert.w_in, &expert.w_gate, &expert.w_out})
          std::fill(m->data.begin(), m->data.end(), 0.0);
  }

  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> tokens(n_tokens,
                                          std::vector<double>(shape.hidden_dim));
  for (auto& t : tokens)
    for (auto& v : t) v = dist(rng);

  ActivationCollector collector;
  collector.per_layer.resize(shape.num_layers);
  model_forward(shape, model, tokens, &ActivationCollector::record, &collector);

  std::ofstream out(out_path);
  if (!out) throw ValidationError("cannot open sparsity CSV for writing: " + out_path);
  out << "layer";
  for (double t : thresholds) out << ',' << threshold_label(t);
  out << '\n';
  out << std::fixed << std::setprecision(2);
  for (int l = 0; l < shape.num_layers; ++l) {
    const auto fractions = sparsity_histogram(collector.per_layer[l], thresholds);
    out << l;
    for (double f : fractions) out << ',' << f * 100.0;
    out << '\n';
  }
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

int cmd_gen_trace(const ShapeFlags& shape_flags, std::uint64_t seed, double skew,
                  int input_len, int output_len, const std::string& out_path) {
  const ModelShape shape = shape_flags.resolve();
  const RoutingTrace trace = synth_trace(shape, skew, input_len, output_len, seed);
  save_trace_jsonl(trace, out_path);
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoE offloading planner and latency simulator"};
  app.require_subcommand(1);

  // calibrate
  std::string records_path, cost_out = "cost_model.json";
  double nonexpert_ms = CostModel::default_calibration().nonexpert_ms_per_step;
  auto* calibrate = app.add_subcommand(
      "calibrate", "Fit a cost model from microbenchmark records");
  calibrate->add_option("--records", records_path, "CSV of microbenchmark records")
      ->required();
  calibrate->add_option("--out", cost_out, "Output cost model JSON")
      ->capture_default_str();
  calibrate->add_option("--nonexpert", nonexpert_ms,
                        "Per-layer non-expert latency (ms)")
      ->capture_default_str();

  // gen-trace
  ShapeFlags gen_shape;
  std::uint64_t gen_seed = default_seed();
  double gen_skew = 0.0;
  int gen_in = 16, gen_out = 16;
  std::string gen_path = "trace.jsonl";
  auto* gen = app.add_subcommand("gen-trace", "Generate a synthetic routing trace");
  add_shape_flags(gen, gen_shape);
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--skew", gen_skew, "Popularity skew (0 = uniform)")
      ->capture_default_str();
  gen->add_option("--input-len", gen_in)->capture_default_str();
  gen->add_option("--output-len", gen_out)->capture_default_str();
  gen->add_option("--out", gen_path)->capture_default_str();

  // profile
  ShapeFlags profile_shape;
  std::string profile_trace, profile_out = "profile.csv";
  auto* profile =
      app.add_subcommand("profile", "Tally expert popularity from a trace");
  add_shape_flags(profile, profile_shape);
  profile->add_option("--trace", profile_trace, "Routing trace JSONL")->required();
  profile->add_option("--out", profile_out)->capture_default_str();

  // place
  std::string place_profile, place_out = "placement.csv";
  int place_capacity = 0;
  bool place_quota = false;
  auto* place = app.add_subcommand(
      "place", "Greedy popularity-ordered placement under a capacity bound");
  place->add_option("--profile", place_profile, "Popularity profile CSV")
      ->required();
  place->add_option("--capacity", place_capacity, "Resident expert budget")
      ->required();
  place->add_flag("--per-layer-quota", place_quota,
                  "Split capacity evenly across layers");
  place->add_option("--out", place_out)->capture_default_str();

  // plan
  ShapeFlags plan_shape;
  std::string plan_trace, plan_placement, plan_cost, plan_dump;
  std::string plan_mode = "paper";
  auto* plan = app.add_subcommand(
      "plan", "Per-layer execution plans for every step of a trace");
  add_shape_flags(plan, plan_shape);
  plan->add_option("--trace", plan_trace)->required();
  plan->add_option("--placement", plan_placement)->required();
  plan->add_option("--cost", plan_cost, "Cost model JSON (default: shipped)");
  plan->add_option("--mode", plan_mode, "Objective mode: paper or calibrated")
      ->check(CLI::IsMember({"paper", "calibrated"}))
      ->capture_default_str();
  plan->add_option("--dump-plans", plan_dump, "Write per-layer plans as JSONL");

  // simulate
  ShapeFlags sim_shape;
  std::string sim_trace, sim_placement, sim_cost, sim_policy = "fiddler";
  auto* simulate =
      app.add_subcommand("simulate", "Replay one trace under a policy");
  add_shape_flags(simulate, sim_shape);
  simulate->add_option("--trace", sim_trace)->required();
  simulate->add_option("--placement", sim_placement,
                       "Placement CSV (default: nothing resident)");
  simulate->add_option("--cost", sim_cost, "Cost model JSON (default: shipped)");
  simulate->add_option("--policy", sim_policy,
                       "fiddler, expertcopy, or fullstream")
      ->capture_default_str();
  bool sim_transient = true;
  simulate
      ->add_flag("--transient-copies,!--no-transient-copies", sim_transient,
                 "Discard copied experts after each step (default); disable "
                 "to adopt them into residency with LRU eviction")
      ->capture_default_str();

  // run
  ShapeFlags run_shape;
  int run_capacity = 7;
  std::string run_cost, run_outdir = "out";
  std::uint64_t run_seed = default_seed();
  double run_skew = 0.0;
  std::vector<int> run_inputs = {16, 32, 64, 128};
  std::vector<int> run_outputs = {16, 32, 64, 128, 256, 512};
  std::vector<std::string> run_policies = {"fiddler", "expertcopy", "fullstream"};
  bool run_quota = false, run_parallel = false;
  auto* run = app.add_subcommand(
      "run", "End to end: calibrate trace, place, simulate the grid, report");
  add_shape_flags(run, run_shape);
  run->add_option("--capacity", run_capacity, "Resident expert budget")
      ->capture_default_str();
  run->add_option("--cost", run_cost, "Cost model JSON (default: shipped)");
  run->add_option("--seed", run_seed)->capture_default_str();
  run->add_option("--skew", run_skew, "Popularity skew for synthetic traces")
      ->capture_default_str();
  run->add_option("--inputs", run_inputs, "Grid input lengths")->delimiter(',');
  run->add_option("--outputs", run_outputs, "Grid output lengths")->delimiter(',');
  run->add_option("--policies", run_policies, "Policies to simulate")
      ->delimiter(',');
  run->add_option("--outdir", run_outdir)->capture_default_str();
  run->add_flag("--per-layer-quota", run_quota,
                "Split capacity evenly across layers");
  run->add_flag("--parallel", run_parallel, "Simulate grid configs concurrently");
  run->set_config("--config", "", "Read options from a config file");

  // sparsity
  ShapeFlags sparsity_shape;
  std::uint64_t sparsity_seed = default_seed();
  int sparsity_tokens = 64;
  std::vector<double> sparsity_thresholds = {0.001, 0.01, 0.1, 1.0};
  bool sparsity_zero = false;
  std::string sparsity_out = "sparsity.csv";
  auto* sparsity = app.add_subcommand(
      "sparsity", "Post-activation magnitude histogram of the toy model");
  add_shape_flags(sparsity, sparsity_shape);
  sparsity->add_option("--seed", sparsity_seed)->capture_default_str();
  sparsity->add_option("--tokens", sparsity_tokens, "Synthetic corpus size")
      ->capture_default_str();
  sparsity->add_option("--thresholds", sparsity_thresholds)->delimiter(',');
  sparsity->add_flag("--zero-weights", sparsity_zero,
                     "Zero all expert weights (sanity mode)");
  sparsity->add_option("--out", sparsity_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (calibrate->parsed())
      return cmd_calibrate(records_path, cost_out, nonexpert_ms);
    if (gen->parsed())
      return cmd_gen_trace(gen_shape, gen_seed, gen_skew, gen_in, gen_out, gen_path);
    if (profile->parsed())
      return cmd_profile(profile_shape, profile_trace, profile_out);
    if (place->parsed())
      return cmd_place(place_profile, place_capacity, place_quota, place_out);
    if (plan->parsed())
      return cmd_plan(plan_shape, plan_trace, plan_placement, plan_cost,
                      plan_mode, plan_dump);
    if (simulate->parsed())
      return cmd_simulate(sim_shape, sim_trace, sim_placement, sim_cost,
                          sim_policy, sim_transient);
    if (run->parsed())
      return cmd_run(run_shape, run_capacity, run_cost, run_seed, run_skew,
                     run_inputs, run_outputs, run_policies, run_outdir,
                     run_quota, run_parallel);
    if (sparsity->parsed())
      return cmd_sparsity(sparsity_shape, sparsity_seed, sparsity_tokens,
                          sparsity_thresholds, sparsity_zero, sparsity_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
