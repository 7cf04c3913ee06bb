#include "moe_orch/cost_model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moe_orch/error.hpp"

namespace moe_orch {

using nlohmann::json;

std::string to_string(Workload w) {
  switch (w) {
    case Workload::WeightCopy: return "WeightCopy";
    case Workload::ActivationCopy: return "ActivationCopy";
    case Workload::FastExec: return "FastExec";
    case Workload::SlowExec: return "SlowExec";
  }
  return "?";
}

Workload workload_from_string(const std::string& s) {
  if (s == "WeightCopy") return Workload::WeightCopy;
  if (s == "ActivationCopy") return Workload::ActivationCopy;
  if (s == "FastExec") return Workload::FastExec;
  if (s == "SlowExec") return Workload::SlowExec;
  throw ValidationError("unknown workload: " + s);
}

void CostModel::validate() const {
  const double fields[] = {weight_copy_ms,  activation_copy_ms,
                           fast_exec_ms,    slow_ms_per_token,
                           slow_intercept_ms, nonexpert_ms_per_step};
  for (double f : fields)
    if (f < 0.0) throw CalibrationError("cost model fields must be >= 0");
}

CostModel CostModel::default_calibration() {
  // weight_copy_ms matches the measured ~50ms expert transfer; the rest are
  // chosen so the Mixtral-scale simulation sits in the multi-token-per-second
  // regime while the slow device still wins every single-token decision.
  CostModel m;
  m.weight_copy_ms = 50.0;
  m.activation_copy_ms = 0.02;
  m.fast_exec_ms = 2.0;
  m.slow_ms_per_token = 3.0;
  m.slow_intercept_ms = 0.0;
  m.nonexpert_ms_per_step = 2.0;
  m.validate();
  return m;
}

CostModel fit(const std::vector<MicrobenchRecord>& records,
              double nonexpert_ms_per_step) {
  double sums[3] = {0, 0, 0};  // WeightCopy, ActivationCopy, FastExec
  int counts[3] = {0, 0, 0};
  std::vector<std::pair<double, double>> slow_points;  // (batch, latency)
  std::set<int> slow_batches;

  for (const auto& rec : records) {
    if (rec.latency_ms <= 0.0)
      throw ValidationError("microbenchmark latency must be positive");
    if (rec.batch_size < 1)
      throw ValidationError("microbenchmark batch_size must be >= 1");
    switch (rec.workload) {
      case Workload::SlowExec:
        slow_points.emplace_back(rec.batch_size, rec.latency_ms);
        slow_batches.insert(rec.batch_size);
        break;
      default: {
        const int idx = static_cast<int>(rec.workload);
        sums[idx] += rec.latency_ms;
        counts[idx] += 1;
      }
    }
  }

  for (int i = 0; i < 3; ++i)
    if (counts[i] == 0)
      throw CalibrationError("calibration incomplete: " +
                             to_string(static_cast<Workload>(i)));
  if (slow_points.empty())
    throw CalibrationError("calibration incomplete: SlowExec");
  if (slow_batches.size() < 2)
    throw CalibrationError(
        "calibration incomplete: SlowExec needs >= 2 distinct batch sizes");

  CostModel model;
  model.weight_copy_ms = sums[0] / counts[0];
  model.activation_copy_ms = sums[1] / counts[1];
  model.fast_exec_ms = sums[2] / counts[2];

  // Ordinary least squares of latency on batch size.
  const double n = static_cast<double>(slow_points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : slow_points) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  const double slope = (n * sxy - sx * sy) / denom;
  const double intercept = (sy - slope * sx) / n;
  model.slow_ms_per_token = std::max(0.0, slope);
  model.slow_intercept_ms = std::max(0.0, intercept);
  model.nonexpert_ms_per_step = nonexpert_ms_per_step;
  model.validate();
  return model;
}

std::vector<MicrobenchRecord> load_records_csv(std::istream& in) {
  std::vector<MicrobenchRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    const auto fail = [&](const std::string& what) {
      std::ostringstream msg;
      msg << "records CSV line " << lineno << ": " << what;
      return ValidationError(msg.str());
    };
    if (lineno == 1) {
      if (line != "workload,batch_size,latency_ms,layer")
        throw fail("expected header workload,batch_size,latency_ms,layer");
      continue;
    }
    if (fields.size() != 4) throw fail("expected 4 fields");
    MicrobenchRecord rec;
    try {
      rec.workload = workload_from_string(fields[0]);
      rec.batch_size = std::stoi(fields[1]);
      rec.latency_ms = std::stod(fields[2]);
      rec.layer = std::stoi(fields[3]);
    } catch (const ValidationError&) {
      throw fail("unknown workload " + fields[0]);
    } catch (const std::exception&) {
      throw fail("malformed numeric field");
    }
    if (rec.latency_ms <= 0.0) throw fail("latency_ms must be positive");
    if (rec.batch_size < 1) throw fail("batch_size must be >= 1");
    records.push_back(rec);
  }
  if (lineno == 0) throw ValidationError("records CSV is empty");
  return records;
}

std::vector<MicrobenchRecord> load_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open records CSV: " + path);
  return load_records_csv(in);
}

std::string cost_model_to_json(const CostModel& model) {
  json j = {{"weight_copy_ms", model.weight_copy_ms},
            {"activation_copy_ms", model.activation_copy_ms},
            {"fast_exec_ms", model.fast_exec_ms},
            {"slow_ms_per_token", model.slow_ms_per_token},
            {"slow_intercept_ms", model.slow_intercept_ms},
            {"nonexpert_ms_per_step", model.nonexpert_ms_per_step}};
  return j.dump(2);
}

CostModel cost_model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cost model JSON: ") + e.what());
  }
  CostModel model;
  try {
    model.weight_copy_ms = j.at("weight_copy_ms").get<double>();
    model.activation_copy_ms = j.at("activation_copy_ms").get<double>();
    model.fast_exec_ms = j.at("fast_exec_ms").get<double>();
    model.slow_ms_per_token = j.at("slow_ms_per_token").get<double>();
    model.slow_intercept_ms = j.at("slow_intercept_ms").get<double>();
    model.nonexpert_ms_per_step = j.at("nonexpert_ms_per_step").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cost model JSON: ") + e.what());
  }
  model.validate();
  return model;
}

void save_cost_model_json(const CostModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open cost model file for writing: " + path);
  out << cost_model_to_json(model) << '\n';
}

CostModel load_cost_model_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cost model file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return cost_model_from_json(buf.str());
}

}  // namespace moe_orch
