#include "moe_orch/placement.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "moe_orch/error.hpp"

namespace moe_orch {

PopularityProfile PopularityProfile::zeros(const ModelShape& shape) {
  PopularityProfile p;
  p.counts.assign(shape.num_layers,
                  std::vector<std::int64_t>(shape.experts_per_layer, 0));
  return p;
}

PopularityProfile PopularityProfile::uniform(int num_layers, int experts_per_layer,
                                             std::int64_t count_per_expert) {
  PopularityProfile p;
  p.counts.assign(num_layers,
                  std::vector<std::int64_t>(experts_per_layer, count_per_expert));
  p.total_selections =
      static_cast<std::int64_t>(num_layers) * experts_per_layer * count_per_expert;
  return p;
}

PopularityProfile profile_from_trace(const RoutingTrace& trace,
                                     const ModelShape& shape) {
  trace.validate(shape);
  PopularityProfile profile = PopularityProfile::zeros(shape);
  for (const auto& step : trace.steps) {
    for (size_t l = 0; l < step.layers.size(); ++l) {
      for (const auto& sel : step.layers[l]) {
        profile.counts[l][sel.expert] += sel.token_count;
        profile.total_selections += sel.token_count;
      }
    }
  }
  return profile;
}

namespace {

struct RankedExpert {
  std::int64_t count;
  int layer;
  int expert;
};

std::vector<RankedExpert> ranked_by_popularity(const PopularityProfile& profile) {
  std::vector<RankedExpert> ranked;
  ranked.reserve(profile.total_experts());
  for (int l = 0; l < profile.num_layers(); ++l)
    for (int e = 0; e < profile.experts_per_layer(); ++e)
      ranked.push_back({profile.counts[l][e], l, e});
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.count != b.count) return a.count > b.count;
    return std::tie(a.layer, a.expert) < std::tie(b.layer, b.expert);
  });
  return ranked;
}

}  // namespace

Placement greedy_place(const PopularityProfile& profile, int capacity,
                       bool per_layer_quota) {
  if (capacity < 0) throw ValidationError("capacity must be >= 0");
  Placement placement;
  placement.capacity = capacity;
  if (!per_layer_quota) {
    const auto ranked = ranked_by_popularity(profile);
    const int take = std::min<int>(capacity, static_cast<int>(ranked.size()));
    for (int i = 0; i < take; ++i)
      placement.resident.insert({ranked[i].layer, ranked[i].expert});
    return placement;
  }
  const int layers = profile.num_layers();
  if (layers == 0) return placement;
  const int quota = capacity / layers;
  for (int l = 0; l < layers; ++l) {
    std::vector<std::pair<std::int64_t, int>> row;
    for (int e = 0; e < profile.experts_per_layer(); ++e)
      row.emplace_back(profile.counts[l][e], e);
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int i = 0; i < std::min<int>(quota, static_cast<int>(row.size())); ++i)
      placement.resident.insert({l, row[i].second});
  }
  return placement;
}

double expected_hit_rate(const Placement& placement,
                         const PopularityProfile& profile) {
  if (profile.total_selections <= 0)
    throw ValidationError("hit rate undefined: profile has no selections");
  std::int64_t hits = 0;
  for (const auto& [layer, expert] : placement.resident)
    hits += profile.counts[layer][expert];
  return static_cast<double>(hits) / static_cast<double>(profile.total_selections);
}

HitRateBounds hit_rate_bounds(const PopularityProfile& profile, int capacity) {
  if (profile.total_selections <= 0)
    throw ValidationError("hit rate undefined: profile has no selections");
  const auto ranked = ranked_by_popularity(profile);
  const int take = std::min<int>(capacity, static_cast<int>(ranked.size()));

  HitRateBounds bounds;
  std::int64_t best_hits = 0, worst_hits = 0;
  for (int i = 0; i < take; ++i) {
    best_hits += ranked[i].count;
    worst_hits += ranked[ranked.size() - 1 - i].count;
  }
  bounds.best = static_cast<double>(best_hits) / profile.total_selections;
  bounds.worst = static_cast<double>(worst_hits) / profile.total_selections;
  bounds.random =
      static_cast<double>(take) / static_cast<double>(profile.total_experts());
  return bounds;
}

std::vector<double> sparsity_histogram(const std::vector<double>& activations,
                                       const std::vector<double>& thresholds) {
  if (activations.empty())
    throw ValidationError("sparsity histogram undefined on empty activations");
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] <= thresholds[i - 1])
      throw ValidationError("thresholds must be strictly increasing");

  std::vector<double> fractions(thresholds.size(), 0.0);
  for (double x : activations) {
    const double a = std::fabs(x);
    for (size_t i = 0; i < thresholds.size(); ++i)
      if (a < thresholds[i]) fractions[i] += 1.0;
  }
  for (auto& f : fractions) f /= static_cast<double>(activations.size());
  return fractions;
}

ProfileStats profile_stats(const PopularityProfile& profile) {
  std::vector<double> values;
  std::int64_t max_count = 0;
  for (const auto& row : profile.counts)
    for (auto c : row) max_count = std::max(max_count, c);
  if (max_count == 0)
    throw ValidationError("profile stats undefined: all counts zero");
  for (const auto& row : profile.counts)
    for (auto c : row)
      values.push_back(static_cast<double>(c) / static_cast<double>(max_count));

  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);

  const auto percentile = [&](double q) {
    const double pos = q * (n - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };

  ProfileStats stats;
  stats.mean = mean;
  stats.stddev = std::sqrt(var / n);
  stats.p25 = percentile(0.25);
  stats.p75 = percentile(0.75);
  stats.min = values.front();
  stats.max = values.back();
  return stats;
}

void save_profile_csv(const PopularityProfile& profile, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open profile CSV for writing: " + path);
  out << "layer,expert,count\n";
  for (int l = 0; l < profile.num_layers(); ++l)
    for (int e = 0; e < profile.experts_per_layer(); ++e)
      out << l << ',' << e << ',' << profile.counts[l][e] << '\n';
}

PopularityProfile load_profile_csv(std::istream& in) {
  std::string line;
  size_t lineno = 0;
  std::vector<std::tuple<int, int, std::int64_t>> rows;
  int max_layer = -1, max_expert = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "layer,expert,count")
        throw ValidationError("profile CSV: expected header layer,expert,count");
      continue;
    }
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') ||
        !std::getline(ss, c, ',')) {
      std::ostringstream msg;
      msg << "profile CSV line " << lineno << ": expected 3 fields";
      throw ValidationError(msg.str());
    }
    try {
      rows.emplace_back(std::stoi(a), std::stoi(b), std::stoll(c));
    } catch (const std::exception&) {
      std::ostringstream msg;
      msg << "profile CSV line " << lineno << ": malformed numeric field";
      throw ValidationError(msg.str());
    }
    auto& [l, e, cnt] = rows.back();
    if (l < 0 || e < 0 || cnt < 0) {
      std::ostringstream msg;
      msg << "profile CSV line " << lineno << ": negative value";
      throw ValidationError(msg.str());
    }
    max_layer = std::max(max_layer, l);
    max_expert = std::max(max_expert, e);
  }
  if (rows.empty()) throw ValidationError("profile CSV has no data rows");
  PopularityProfile profile;
  profile.counts.assign(max_layer + 1,
                        std::vector<std::int64_t>(max_expert + 1, 0));
  for (const auto& [l, e, cnt] : rows) {
    profile.counts[l][e] = cnt;
    profile.total_selections += cnt;
  }
  return profile;
}

PopularityProfile load_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open profile CSV: " + path);
  return load_profile_csv(in);
}

void save_placement_csv(const Placement& placement, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open placement CSV for writing: " + path);
  out << "# capacity=" << placement.capacity << '\n';
  out << "layer,expert\n";
  for (const auto& [l, e] : placement.resident) out << l << ',' << e << '\n';
}

Placement load_placement_csv(std::istream& in) {
  Placement placement;
  std::string line;
  size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# capacity=", 0) == 0) {
      placement.capacity = std::stoi(line.substr(11));
      continue;
    }
    if (!header_seen) {
      if (line != "layer,expert")
        throw ValidationError("placement CSV: expected header layer,expert");
      header_seen = true;
      continue;
    }
    std::stringstream ss(line);
    std::string a, b;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',')) {
      std::ostringstream msg;
      msg << "placement CSV line " << lineno << ": expected 2 fields";
      throw ValidationError(msg.str());
    }
    try {
      placement.resident.insert({std::stoi(a), std::stoi(b)});
    } catch (const std::exception&) {
      std::ostringstream msg;
      msg << "placement CSV line " << lineno << ": malformed numeric field";
      throw ValidationError(msg.str());
    }
  }
  if (static_cast<int>(placement.resident.size()) > placement.capacity)
    throw ValidationError("placement CSV: resident set exceeds capacity");
  return placement;
}

Placement load_placement_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open placement CSV: " + path);
  return load_placement_csv(in);
}

}  // namespace moe_orch
