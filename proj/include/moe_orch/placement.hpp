#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "moe_orch/shape.hpp"
#include "moe_orch/trace.hpp"

namespace moe_orch {

// Token-routing counts per (layer, expert).
struct PopularityProfile {
  std::vector<std::vector<std::int64_t>> counts;  // [layer][expert]
  std::int64_t total_selections = 0;

  int num_layers() const { return static_cast<int>(counts.size()); }
  int experts_per_layer() const {
    return counts.empty() ? 0 : static_cast<int>(counts[0].size());
  }
  int total_experts() const { return num_layers() * experts_per_layer(); }

  static PopularityProfile zeros(const ModelShape& shape);
  // All counts equal; handy for analytic hit-rate identities.
  static PopularityProfile uniform(int num_layers, int experts_per_layer,
                                   std::int64_t count_per_expert = 1);
};

// The set of experts resident in fast-device memory, under a capacity bound.
struct Placement {
  std::set<std::pair<int, int>> resident;  // (layer, expert)
  int capacity = 0;

  bool contains(int layer, int expert) const {
    return resident.count({layer, expert}) > 0;
  }

  friend bool operator==(const Placement&, const Placement&) = default;
};

PopularityProfile profile_from_trace(const RoutingTrace& trace,
                                     const ModelShape& shape);

// Fills capacity with the most popular experts in global popularity order,
// ties broken by (layer, expert). per_layer_quota splits the capacity evenly
// across layers instead of pooling it.
Placement greedy_place(const PopularityProfile& profile, int capacity,
                       bool per_layer_quota = false);

// Selection-weighted probability that a routed token's expert is resident.
// Throws ValidationError when the profile has no selections.
double expected_hit_rate(const Placement& placement,
                         const PopularityProfile& profile);

struct HitRateBounds {
  double best = 0.0;
  double worst = 0.0;
  double random = 0.0;
};

HitRateBounds hit_rate_bounds(const PopularityProfile& profile, int capacity);

// fraction[i] = |{x : |x| < thresholds[i]}| / N. Thresholds must be strictly
// increasing; activations non-empty.
std::vector<double> sparsity_histogram(const std::vector<double>& activations,
                                       const std::vector<double>& thresholds);

// Summary of max-normalized popularity across all experts.
struct ProfileStats {
  double mean = 0.0;
  double stddev = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

ProfileStats profile_stats(const PopularityProfile& profile);

// CSV `layer,expert,count`.
void save_profile_csv(const PopularityProfile& profile, const std::string& path);
PopularityProfile load_profile_csv(std::istream& in);
PopularityProfile load_profile_csv(const std::string& path);

// CSV `layer,expert` plus a `# capacity=N` comment line.
void save_placement_csv(const Placement& placement, const std::string& path);
Placement load_placement_csv(std::istream& in);
Placement load_placement_csv(const std::string& path);

}  // namespace moe_orch
