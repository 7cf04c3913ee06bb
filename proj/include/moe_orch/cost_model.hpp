#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace moe_orch {

enum class Workload { WeightCopy, ActivationCopy, FastExec, SlowExec };

std::string to_string(Workload w);
Workload workload_from_string(const std::string& s);

struct MicrobenchRecord {
  Workload workload = Workload::FastExec;
  int batch_size = 1;  // 1 for copies
  double latency_ms = 0.0;
  int layer = 0;
};

// Calibrated per-expert latencies: fast device constant, slow device linear
// in tokens.
struct CostModel {
  double weight_copy_ms = 0.0;       // per expert
  double activation_copy_ms = 0.0;   // per direction
  double fast_exec_ms = 0.0;         // per expert invocation, batch-independent
  double slow_ms_per_token = 0.0;    // per expert, per token
  double slow_intercept_ms = 0.0;
  double nonexpert_ms_per_step = 0.0;  // attention/norm/router, per layer

  double slow_cost(int n_tokens) const {
    return slow_intercept_ms + slow_ms_per_token * n_tokens;
  }

  // True iff running a single-token expert on the slow device (plus the
  // activation round trip) beats copying the weight in and running fast.
  bool decode_assumption_check() const {
    return slow_cost(1) + 2.0 * activation_copy_ms <
           weight_copy_ms + fast_exec_ms;
  }

  void validate() const;  // throws CalibrationError on negative fields

  // Shipped calibration used when no microbenchmark records are provided.
  static CostModel default_calibration();
};

// Means for copy/fast workloads, ordinary least squares (clamped at 0) for
// the slow-execution line. Throws CalibrationError when a workload kind is
// missing or SlowExec covers fewer than two distinct batch sizes. The
// non-expert per-layer cost is not a microbenchmark workload and is taken
// from the argument (default: the shipped calibration's value).
CostModel fit(const std::vector<MicrobenchRecord>& records,
              double nonexpert_ms_per_step = 2.0);

// CSV with header `workload,batch_size,latency_ms,layer`. Parse errors name
// the offending line number.
std::vector<MicrobenchRecord> load_records_csv(std::istream& in);
std::vector<MicrobenchRecord> load_records_csv(const std::string& path);

// Flat JSON object of the six fields.
void save_cost_model_json(const CostModel& model, const std::string& path);
CostModel load_cost_model_json(const std::string& path);
std::string cost_model_to_json(const CostModel& model);
CostModel cost_model_from_json(const std::string& text);

}  // namespace moe_orch
