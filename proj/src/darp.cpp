#include "pyrhead/darp.hpp"

#include <algorithm>
#include <cmath>

#include "pyrhead/errors.hpp"

namespace pyrhead {

using num::Tape;
using num::Tensor;
using num::Var;

ContextAggregatorParams ContextAggregatorParams::create(num::ParameterSet& params, const std::string& name,
                                                        std::size_t d_in, std::size_t hidden,
                                                        std::size_t sphere_width, std::array<double, 2> radii,
                                                        num::Rng& rng) {
  ContextAggregatorParams p;
  p.radii = radii;
  p.mlp = num::Mlp::create(params, name + ".mlp", {d_in + 3, hidden, sphere_width}, rng);
  p.validate();
  return p;
}

void ContextAggregatorParams::validate() const {
  if (!(radii[0] > 0.0 && radii[1] > radii[0])) throw ParameterError("context radii must be strictly increasing");
}

Var context_embedding(Tape& tape, const Box3D& roi, const PointSet& ps, const SpatialIndex& idx,
                      const ContextAggregatorParams& params) {
  const Vec3 c = roi.center();
  const std::size_t d = ps.feature_dim();
  const std::size_t width = params.mlp.out_dim();
  auto outer = idx.ball_query(c, params.radii[1]);
  if (outer.empty()) return tape.constant(Tensor({1, 2 * width}));
  std::sort(outer.begin(), outer.end(), [](const Neighbor& a, const Neighbor& b) { return a.id < b.id; });

  Tensor input({outer.size(), d + 3});
  std::vector<std::size_t> rows;  // inner members first, then every outer member
  for (std::size_t r = 0; r < outer.size(); ++r) {
    const auto f = ps.feature(outer[r].id);
    std::copy(f.begin(), f.end(), input.row(r).begin());
    const Vec3 off = ps.coords[outer[r].id] - c;
    input.at(r, d) = off.x;
    input.at(r, d + 1) = off.y;
    input.at(r, d + 2) = off.z;
    if (outer[r].distance <= params.radii[0]) rows.push_back(r);
  }
  const std::size_t inner = rows.size();
  for (std::size_t r = 0; r < outer.size(); ++r) rows.push_back(r);

  const Var embedded = params.mlp(tape, tape.constant(std::move(input)));
  const std::vector<std::size_t> offsets{0, inner, rows.size()};
  const Var pooled = num::segment_max(num::gather_rows(embedded, rows), offsets);
  return num::reshape(pooled, {1, 2 * width});
}

RadiusHeadParams RadiusHeadParams::create(num::ParameterSet& params, const std::string& name,
                                          std::size_t context_width, std::size_t hidden, std::vector<double> r_pre,
                                          double r_min, num::Rng& rng) {
  RadiusHeadParams p;
  p.r_pre = std::move(r_pre);
  p.r_min = r_min;
  p.validate();
  p.mlp = num::Mlp::create(params, name, {context_width, hidden, p.r_pre.size()}, rng, num::Activation::identity,
                           num::Init::zeros);
  return p;
}

void RadiusHeadParams::validate() const {
  if (r_pre.empty()) throw ParameterError("radius head needs at least one level");
  for (double r : r_pre) {
    if (!(r > 0.0)) throw ParameterError("predefined radii must be positive");
  }
  if (!(r_min > 0.0)) throw ParameterError("r_min must be positive");
}

Var radius_offsets(Tape& tape, Var ctx, const RadiusHeadParams& params) { return params.mlp(tape, ctx); }

Var effective_radius(Tape& /*tape*/, Var offsets, std::size_t level, const RadiusHeadParams& params) {
  if (level >= params.levels()) throw ParameterError("pyramid level out of range");
  Var dr = num::slice_cols(offsets, level, 1);
  Var r = num::shift(dr, params.r_pre[level]);
  return num::reshape(num::clamp_min(r, params.r_min), {1});
}

Var predict_radius(Tape& tape, Var ctx, std::size_t level, const RadiusHeadParams& params) {
  return effective_radius(tape, radius_offsets(tape, ctx, params), level, params);
}

double TemperatureSchedule::at(std::size_t step) const {
  validate();
  if (step > total_steps) throw ParameterError("temperature step beyond schedule length");
  if (step == 0) return tau_start;
  if (step == total_steps) return tau_end;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return tau_start * std::pow(tau_end / tau_start, frac);
}

void TemperatureSchedule::validate() const {
  if (!(tau_end > 0.0 && tau_start >= tau_end)) throw ParameterError("temperature schedule needs tau_start >= tau_end > 0");
  if (total_steps == 0) throw ParameterError("temperature schedule needs total_steps >= 1");
}

}  // namespace pyrhead
