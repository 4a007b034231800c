#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pyrhead/nn.hpp"
#include "pyrhead/spatial.hpp"

namespace pyrhead {

/// Two nested context spheres centered on the RoI. One MLP embeds
/// [feature, offset from RoI center] for every member; each sphere is the
/// channel-wise max over its members.
struct ContextAggregatorParams {
  std::array<double, 2> radii{2.4, 4.8};
  num::Mlp mlp;

  static ContextAggregatorParams create(num::ParameterSet& params, const std::string& name, std::size_t d_in,
                                        std::size_t hidden, std::size_t sphere_width, std::array<double, 2> radii,
                                        num::Rng& rng);
  std::size_t width() const { return 2 * mlp.out_dim(); }
  void validate() const;
};

/// [1, width] context vector, inner sphere first. Empty spheres contribute
/// zeros.
num::Var context_embedding(num::Tape& tape, const Box3D& roi, const PointSet& ps, const SpatialIndex& idx,
                           const ContextAggregatorParams& params);

/// Radius offsets for every pyramid level from one context vector.
struct RadiusHeadParams {
  num::Mlp mlp;  // width -> hidden -> levels, final layer zero-initialized
  std::vector<double> r_pre{0.8, 1.6, 2.4, 3.2, 6.4};
  double r_min = 0.05;

  static RadiusHeadParams create(num::ParameterSet& params, const std::string& name, std::size_t context_width,
                                 std::size_t hidden, std::vector<double> r_pre, double r_min, num::Rng& rng);
  std::size_t levels() const { return r_pre.size(); }
  void validate() const;
};

/// All offsets at once: [1, levels] = MLP(ctx).
num::Var radius_offsets(num::Tape& tape, num::Var ctx, const RadiusHeadParams& params);

/// max(r_min, r_pre[level] + dr[level]) as a [1] value. `offsets` is the
/// output of radius_offsets.
num::Var effective_radius(num::Tape& tape, num::Var offsets, std::size_t level, const RadiusHeadParams& params);

/// Convenience composition of the two above for a single level.
num::Var predict_radius(num::Tape& tape, num::Var ctx, std::size_t level, const RadiusHeadParams& params);

/// Geometric decay from tau_start at step 0 to tau_end at total_steps.
struct TemperatureSchedule {
  double tau_start = 0.02;
  double tau_end = 1e-4;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
  double eval() const { return tau_end; }
  void validate() const;
};

inline double temperature(std::size_t step, const TemperatureSchedule& sched) { return sched.at(step); }

}  // namespace pyrhead
