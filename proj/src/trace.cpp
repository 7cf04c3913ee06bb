#include "moe_orch/trace.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moe_orch/error.hpp"

namespace moe_orch {

using nlohmann::json;

std::string to_string(StepKind kind) {
  return kind == StepKind::Prefill ? "prefill" : "decode";
}

StepKind step_kind_from_string(const std::string& s) {
  if (s == "prefill") return StepKind::Prefill;
  if (s == "decode") return StepKind::Decode;
  throw ValidationError("unknown step kind: " + s);
}

int TraceStep::token_count(int top_k) const {
  if (kind == StepKind::Decode) return 1;
  if (layers.empty()) return 0;
  std::int64_t total = 0;
  for (const auto& sel : layers[0]) total += sel.token_count;
  return static_cast<int>(total / top_k);
}

namespace {

void validate_step(const TraceStep& step, const ModelShape& shape, size_t idx) {
  const auto where = [&](const std::string& what) {
    std::ostringstream msg;
    msg << "trace step " << idx << ": " << what;
    return ValidationError(msg.str());
  };

  if (static_cast<int>(step.layers.size()) != shape.num_layers)
    throw where("layer count does not match shape");

  std::int64_t expected_total = -1;
  for (int l = 0; l < shape.num_layers; ++l) {
    const auto& sels = step.layers[l];
    std::set<int> seen;
    std::int64_t total = 0;
    for (const auto& sel : sels) {
      if (sel.expert < 0 || sel.expert >= shape.experts_per_layer)
        throw where("expert id out of range");
      if (!seen.insert(sel.expert).second)
        throw where("duplicate expert in layer selection");
      if (sel.token_count < 1) throw where("token_count must be >= 1");
      if (!(sel.gate_weight > 0.0)) throw where("gate_weight must be positive");
      total += sel.token_count;
    }
    if (step.kind == StepKind::Decode) {
      if (static_cast<int>(sels.size()) != shape.top_k)
        throw where("decode step must select exactly top_k experts per layer");
      for (const auto& sel : sels)
        if (sel.token_count != 1)
          throw where("decode selections must carry exactly one token");
    } else {
      if (total % shape.top_k != 0)
        throw where("prefill token total must be a multiple of top_k");
      if (expected_total < 0) expected_total = total;
      if (total != expected_total)
        throw where("prefill token totals differ across layers");
      const std::int64_t n_tokens = total / shape.top_k;
      if (n_tokens < 1) throw where("prefill step must carry tokens");
      if (static_cast<std::int64_t>(sels.size()) <
          std::min<std::int64_t>(shape.top_k, shape.experts_per_layer))
        throw where("prefill layer selects fewer than top_k experts");
      for (const auto& sel : sels)
        if (sel.token_count > n_tokens)
          throw where("expert receives more tokens than the step carries");
    }
  }
}

}  // namespace

void RoutingTrace::validate(const ModelShape& shape) const {
  shape.validate();
  for (size_t i = 0; i < steps.size(); ++i) validate_step(steps[i], shape, i);
}

void save_trace_jsonl(const RoutingTrace& trace, std::ostream& out) {
  for (const auto& step : trace.steps) {
    json layers = json::array();
    for (const auto& layer : step.layers) {
      json sels = json::array();
      for (const auto& sel : layer)
        sels.push_back({sel.expert, sel.token_count, sel.gate_weight});
      layers.push_back(std::move(sels));
    }
    json line = {{"kind", to_string(step.kind)}, {"layers", std::move(layers)}};
    out << line.dump() << '\n';
  }
}

void save_trace_jsonl(const RoutingTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open trace file for writing: " + path);
  save_trace_jsonl(trace, out);
}

RoutingTrace load_trace_jsonl(std::istream& in, const ModelShape& shape) {
  RoutingTrace trace;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json parsed;
    try {
      parsed = json::parse(line);
    } catch (const json::exception& e) {
      std::ostringstream msg;
      msg << "trace line " << lineno << ": " << e.what();
      throw ValidationError(msg.str());
    }
    TraceStep step;
    step.kind = step_kind_from_string(parsed.at("kind").get<std::string>());
    for (const auto& layer : parsed.at("layers")) {
      std::vector<Selection> sels;
      for (const auto& entry : layer) {
        if (!entry.is_array() || entry.size() != 3)
          throw ValidationError("trace selection must be [expert, tokens, gate]");
        sels.push_back(Selection{entry[0].get<int>(), entry[1].get<int>(),
                                 entry[2].get<double>()});
      }
      step.layers.push_back(std::move(sels));
    }
    trace.steps.push_back(std::move(step));
  }
  trace.validate(shape);
  return trace;
}

RoutingTrace load_trace_jsonl(const std::string& path, const ModelShape& shape) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trace file: " + path);
  return load_trace_jsonl(in, shape);
}

}  // namespace moe_orch
