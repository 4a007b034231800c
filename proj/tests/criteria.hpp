#pragma once

#include <cstddef>
#include <cstdint>

// Randomized oracle comparisons shared by the unit tests and the acceptance run.
namespace criteria {

struct GateReduction {
  double graph = 0.0;        // max rel error, gates (1,0,0,0) vs loop oracle
  double attention = 0.0;    // (0,0,1,0)
  double transformer = 0.0;  // (1,1,0,1)
  double worst() const;
};

/// Instances with one grid point, m in [1,32] neighbors and d-wide features.
GateReduction gate_reduction(std::size_t instances, std::size_t d, std::uint64_t seed);

/// Max |grid - oracle| over random boxes, grid sizes, ratios and anchors.
double geometry_max_error(std::size_t configs, std::uint64_t seed);

/// Queries whose id set (capped or uncapped, plain or extended) differs from
/// a brute-force scan. Scene sizes are log-uniform up to max_points.
std::size_t spatial_mismatches(std::size_t scenes, std::size_t max_points, std::size_t queries_per_scene,
                               std::uint64_t seed);

/// max |s(d|r) - p(d|r)| over d in [0, 3r] (`steps` samples) with |d - r| > 10 tau,
/// for several radii.
double soft_hard_max_gap(double tau, std::size_t steps);

}  // namespace criteria
