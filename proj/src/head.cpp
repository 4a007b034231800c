#include "pyrhead/head.hpp"

#include <cmath>

#include "pyrhead/errors.hpp"

namespace pyrhead {

using num::Tape;
using num::Tensor;
using num::Var;

HeadConfig HeadConfig::standard() { return HeadConfig{}; }

HeadConfig HeadConfig::single_level_baseline() {
  HeadConfig cfg;
  cfg.pyramid.levels.resize(1);
  cfg.darp.enabled = false;
  return cfg;
}

void HeadConfig::validate() const {
  if (schema_version != kHeadConfigSchemaVersion) {
    throw FormatError("unsupported head config schema version " + std::to_string(schema_version));
  }
  pyramid.validate();
  if (d_in == 0) throw ParameterError("input feature width must be positive");
  if (attention.heads == 0 || attention.d_model % attention.heads != 0) {
    throw ParameterError("attention width must be a multiple of the head count");
  }
  if (attention.gates) attention.gates->validate();
  if (darp.enabled) {
    darp.schedule.validate();
    if (!(darp.context_radii[0] > 0.0 && darp.context_radii[1] > darp.context_radii[0])) {
      throw ParameterError("context radii must be strictly increasing");
    }
    if (!(darp.r_min > 0.0)) throw ParameterError("r_min must be positive");
  }
  if (level_width == 0 || fusion_widths.empty()) throw ParameterError("fusion widths must be non-empty");
  for (auto w : fusion_widths) {
    if (w == 0) throw ParameterError("fusion widths must be positive");
  }
  if (!(loss.positive_iou > 0.0 && loss.positive_iou <= 1.0)) throw ParameterError("positive IoU must be in (0,1]");
}

PyramidHead::PyramidHead(HeadConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  num::Rng rng(seed);
  const std::size_t levels = cfg_.pyramid.levels.size();
  for (std::size_t l = 0; l < levels; ++l) {
    level_attention_.push_back(AttentionParams::create(params_, "level" + std::to_string(l) + ".attention",
                                                       cfg_.d_in, cfg_.attention.d_model, cfg_.attention.heads, rng));
  }
  if (cfg_.darp.enabled) {
    context_ = ContextAggregatorParams::create(params_, "darp.context", cfg_.d_in, cfg_.darp.context_hidden,
                                               cfg_.darp.sphere_width, cfg_.darp.context_radii, rng);
    std::vector<double> r_pre;
    for (const auto& lvl : cfg_.pyramid.levels) r_pre.push_back(lvl.r_pre);
    radius_ = RadiusHeadParams::create(params_, "darp.radius", context_->width(), cfg_.darp.radius_hidden,
                                       std::move(r_pre), cfg_.darp.r_min, rng);
  }
  for (std::size_t l = 0; l < levels; ++l) {
    level_reduce_.push_back(num::LinearLayer::create(params_, "level" + std::to_string(l) + ".reduce",
                                                     cfg_.attention.d_model, cfg_.level_width, rng,
                                                     num::Activation::relu));
  }
  std::vector<std::size_t> dims{levels * cfg_.level_width};
  dims.insert(dims.end(), cfg_.fusion_widths.begin(), cfg_.fusion_widths.end());
  fusion_ = num::Mlp::create(params_, "fusion", dims, rng, num::Activation::relu);
  cls_ = num::LinearLayer::create(params_, "cls", fusion_.out_dim(), 1, rng);
  reg_ = num::LinearLayer::create(params_, "reg", fusion_.out_dim(), kResidualCount, rng);
}

std::vector<Var> PyramidHead::predict_radii(Tape& tape, const Box3D& roi, const PointSet& ps,
                                            const SpatialIndex& idx) const {
  std::vector<Var> radii;
  if (!cfg_.darp.enabled) return radii;
  const Var ctx = context_embedding(tape, roi, ps, idx, *context_);
  const Var offsets = radius_offsets(tape, ctx, *radius_);
  for (std::size_t l = 0; l < cfg_.pyramid.levels.size(); ++l) radii.push_back(effective_radius(tape, offsets, l, *radius_));
  return radii;
}

Var PyramidHead::level_grid_features(Tape& tape, std::size_t level, const Box3D& roi, const PointSet& ps,
                                     const SpatialIndex& idx, Var radius, double tau, std::size_t* gathered) const {
  const PyramidLevelConfig& lc = cfg_.pyramid.levels.at(level);
  const std::vector<Vec3> grid = pyramid_grid_points(roi, lc);
  const AttentionParams& ap = level_attention_[level];
  Var out;
  if (cfg_.darp.enabled) {
    const NeighborBatch nb =
        gather_neighbors(ps, idx, grid, extended_radius(radius.value()[0], tau), lc.max_neighbors);
    if (gathered) *gathered += nb.rows();
    out = roi_grid_attention_darp(tape, nb, ap, radius, tau, cfg_.attention.gates);
  } else {
    const NeighborBatch nb = gather_neighbors(ps, idx, grid, lc.r_pre, lc.max_neighbors);
    if (gathered) *gathered += nb.rows();
    out = roi_grid_attention(tape, nb, ap, cfg_.attention.gates);
  }
  return out;
}

RoiOutput PyramidHead::forward(Tape& tape, const Box3D& roi, const PointSet& ps, const SpatialIndex& idx,
                               double tau) const {
  if (ps.feature_dim() != cfg_.d_in && !ps.empty()) {
    throw DimensionError("point features have width " + std::to_string(ps.feature_dim()) + ", head expects " +
                         std::to_string(cfg_.d_in));
  }
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  RoiOutput out;
  out.radii = predict_radii(tape, roi, ps, idx);
  std::vector<Var> level_feats;
  for (std::size_t l = 0; l < cfg_.pyramid.levels.size(); ++l) {
    Var radius = out.radii.empty() ? Var{} : out.radii[l];
    if (radius.valid()) out.radius_values.push_back(radius.value()[0]);
    const Var grid_feats = level_grid_features(tape, l, roi, ps, idx, radius, tau, &out.gathered);
    level_feats.push_back(level_reduce_[l](tape, num::mean_rows(grid_feats)));
  }
  out.feature = fusion_(tape, num::concat_cols(level_feats));
  out.logit = cls_(tape, out.feature);
  out.residuals = reg_(tape, out.feature);
  return out;
}

Var PyramidHead::extract_roi_features(Tape& tape, const Box3D& roi, const PointSet& ps, const SpatialIndex& idx,
                                      std::size_t step) const {
  const double tau = cfg_.darp.enabled ? cfg_.darp.schedule.at(step) : cfg_.darp.schedule.eval();
  return forward(tape, roi, ps, idx, tau).feature;
}

Detection refine(const Box3D& roi, double logit, std::span<const double> r) {
  if (r.size() != kResidualCount) throw DimensionError("refine expects 7 residuals");
  Detection det;
  det.score = 1.0 / (1.0 + std::exp(-logit));
  std::copy(r.begin(), r.end(), det.residuals.begin());
  const Vec3 center = roi.center() + Vec3{r[0], r[1], r[2]};
  const Vec3 ext{roi.extents.x * std::exp(r[3]), roi.extents.y * std::exp(r[4]), roi.extents.z * std::exp(r[5])};
  det.box = Box3D::from_center(center, ext, wrap_angle(roi.yaw + r[6]));
  return det;
}

Detection refine(const Box3D& roi, const RoiOutput& out) {
  return refine(roi, out.logit.value()[0], out.residuals.value().data());
}

std::array<double, kResidualCount> residual_targets(const Box3D& p, const Box3D& t) {
  const Vec3 dc = t.center() - p.center();
  return {dc.x,
          dc.y,
          dc.z,
          std::log(t.extents.x / p.extents.x),
          std::log(t.extents.y / p.extents.y),
          std::log(t.extents.z / p.extents.z),
          wrap_angle(t.yaw - p.yaw)};
}

int classification_label(const Box3D& proposal, const Target& target, double positive_iou) {
  return target.has_object && derotated_iou(proposal, target.box) >= positive_iou ? 1 : 0;
}

Var roi_loss(Tape& tape, const RoiOutput& out, const Box3D& proposal, const Target& target, const LossConfig& cfg,
             std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  const int label = classification_label(proposal, target, cfg.positive_iou);
  // BCE with logits: softplus(x) - y x.
  Var cls = num::softplus(out.logit);
  if (label == 1) cls = num::sub(cls, out.logit);
  Var total = num::scale(num::sum(cls), cfg.cls_weight);
  if (label == 1) {
    const auto tgt = residual_targets(proposal, target.box);
    const Var diff = num::sub(out.residuals, tape.constant(Tensor({1, kResidualCount}, {tgt.begin(), tgt.end()})));
    total = num::add(total, num::scale(num::sum(num::smooth_l1(diff)), cfg.reg_weight));
  }
  return num::scale(total, 1.0 / static_cast<double>(batch_size));
}

Var loss(Tape& tape, std::span<const RoiOutput> outs, std::span<const Box3D> proposals,
         std::span<const Target> targets, const LossConfig& cfg) {
  if (outs.size() != proposals.size() || outs.size() != targets.size()) {
    throw DimensionError("loss: outputs, proposals and targets must align");
  }
  Var total = tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < outs.size(); ++i) {
    total = num::add(total, roi_loss(tape, outs[i], proposals[i], targets[i], cfg, outs.size()));
  }
  return total;
}

}  // namespace pyrhead
