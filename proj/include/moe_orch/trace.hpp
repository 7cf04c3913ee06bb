#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "moe_orch/shape.hpp"

namespace moe_orch {

enum class StepKind { Prefill, Decode };

std::string to_string(StepKind kind);
StepKind step_kind_from_string(const std::string& s);

// One expert selection within a layer of a step. For prefill steps several
// tokens may route to the same expert, so token_count aggregates them.
struct Selection {
  int expert = 0;
  int token_count = 0;
  double gate_weight = 0.0;

  friend bool operator==(const Selection&, const Selection&) = default;
};

struct TraceStep {
  StepKind kind = StepKind::Decode;
  // layers[l] lists the selections at layer l, sorted by expert id.
  std::vector<std::vector<Selection>> layers;

  // Number of tokens this step processes (1 for decode).
  int token_count(int top_k) const;

  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

// Per-token, per-layer expert selections for a whole generation.
struct RoutingTrace {
  std::vector<TraceStep> steps;

  // Throws ValidationError when any step violates the trace invariants
  // (expert ids in range, positive token counts, decode steps single-token,
  // prefill per-layer totals equal to tokens x top_k).
  void validate(const ModelShape& shape) const;

  friend bool operator==(const RoutingTrace&, const RoutingTrace&) = default;
};

// JSON Lines, one step per line:
//   {"kind":"prefill"|"decode","layers":[[[expert,token_count,gate_weight],...],...]}
void save_trace_jsonl(const RoutingTrace& trace, std::ostream& out);
void save_trace_jsonl(const RoutingTrace& trace, const std::string& path);

// Loads and validates against the shape; throws ValidationError on violation.
RoutingTrace load_trace_jsonl(std::istream& in, const ModelShape& shape);
RoutingTrace load_trace_jsonl(const std::string& path, const ModelShape& shape);

}  // namespace moe_orch
