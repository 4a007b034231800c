#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pyrhead/darp.hpp"
#include "pyrhead/geometry.hpp"
#include "pyrhead/operators.hpp"

namespace pyrhead {

inline constexpr int kHeadConfigSchemaVersion = 1;

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  /// Replaces the learned gates when set.
  std::optional<GateOverride> gates;
};

struct DarpConfig {
  /// When off, every level gathers at its fixed r_pre with the plain operator.
  bool enabled = true;
  std::array<double, 2> context_radii{2.4, 4.8};
  std::size_t context_hidden = 32;
  std::size_t sphere_width = 64;
  std::size_t radius_hidden = 32;
  double r_min = 0.05;
  TemperatureSchedule schedule{0.02, 1e-4, 500};
};

struct LossConfig {
  double cls_weight = 1.0;
  double reg_weight = 2.0;
  double positive_iou = 0.55;
};

struct HeadConfig {
  int schema_version = kHeadConfigSchemaVersion;
  PyramidConfig pyramid = PyramidConfig::standard();
  std::size_t d_in = 8;
  AttentionConfig attention;
  DarpConfig darp;
  std::size_t level_width = 64;
  std::vector<std::size_t> fusion_widths{128, 128};
  LossConfig loss;

  /// Five-level pyramid with learned radii.
  static HeadConfig standard();
  /// Bottom level only (6^3 grid, unit ratios) at its fixed radius.
  static HeadConfig single_level_baseline();
  void validate() const;
};

/// Number of box residuals: dx, dy, dz, dW, dL, dH, dyaw.
inline constexpr std::size_t kResidualCount = 7;

struct Detection {
  Box3D box;
  double score = 0.0;
  std::array<double, kResidualCount> residuals{};
};

/// Forward products for one RoI, all on the caller's tape.
struct RoiOutput {
  num::Var feature;               // [1, fusion width]
  num::Var logit;                 // [1,1]
  num::Var residuals;             // [1,7]
  std::vector<num::Var> radii;    // per level, [1]; empty without DARP
  std::vector<double> radius_values;
  std::size_t gathered = 0;       // neighbor rows over all levels
};

/// Pyramid RoI head: per-level grid, shared per-level radius, gated
/// attention at every grid point, mean + linear reduction per level,
/// fusion MLP, classification and regression heads.
class PyramidHead {
 public:
  PyramidHead(HeadConfig cfg, std::uint64_t seed);

  const HeadConfig& config() const { return cfg_; }
  num::ParameterSet& params() { return params_; }
  const num::ParameterSet& params() const { return params_; }

  RoiOutput forward(num::Tape& tape, const Box3D& roi, const PointSet& ps, const SpatialIndex& idx,
                    double tau) const;

  /// Fused feature vector at a training step (temperature from the schedule).
  num::Var extract_roi_features(num::Tape& tape, const Box3D& roi, const PointSet& ps, const SpatialIndex& idx,
                                std::size_t step) const;

  /// Per-level grid features [G,d_model] before reduction; exposed for
  /// diagnostics and cross-checks.
  num::Var level_grid_features(num::Tape& tape, std::size_t level, const Box3D& roi, const PointSet& ps,
                               const SpatialIndex& idx, num::Var radius, double tau,
                               std::size_t* gathered = nullptr) const;

  /// Context embedding + per-level effective radii. Empty without DARP.
  std::vector<num::Var> predict_radii(num::Tape& tape, const Box3D& roi, const PointSet& ps,
                                      const SpatialIndex& idx) const;

  const AttentionParams& level_attention(std::size_t level) const { return level_attention_.at(level); }
  const num::LinearLayer& level_reduction(std::size_t level) const { return level_reduce_.at(level); }
  const num::Mlp& fusion() const { return fusion_; }
  const num::LinearLayer& cls_head() const { return cls_; }
  const num::LinearLayer& reg_head() const { return reg_; }
  const std::optional<ContextAggregatorParams>& context() const { return context_; }
  const std::optional<RadiusHeadParams>& radius_head() const { return radius_; }

 private:
  HeadConfig cfg_;
  num::ParameterSet params_;
  std::vector<AttentionParams> level_attention_;
  std::optional<ContextAggregatorParams> context_;
  std::optional<RadiusHeadParams> radius_;
  std::vector<num::LinearLayer> level_reduce_;
  num::Mlp fusion_;
  num::LinearLayer cls_;
  num::LinearLayer reg_;
};

/// score = sigmoid(logit); center += (dx,dy,dz); extents *= exp(dW,dL,dH);
/// yaw += dyaw wrapped to [-pi, pi).
Detection refine(const Box3D& roi, double logit, std::span<const double> residuals);
Detection refine(const Box3D& roi, const RoiOutput& out);

/// Regression target that refine() maps `proposal` onto `target` with.
std::array<double, kResidualCount> residual_targets(const Box3D& proposal, const Box3D& target);

struct Target {
  bool has_object = false;
  Box3D box;
};

/// 1 iff the proposal has an object and derotated IoU >= threshold.
int classification_label(const Box3D& proposal, const Target& target, double positive_iou);

/// Loss contribution of one RoI, already divided by `batch_size`:
/// (cls_weight * BCE + reg_weight * positive * sum smooth_l1) / batch_size.
num::Var roi_loss(num::Tape& tape, const RoiOutput& out, const Box3D& proposal, const Target& target,
                  const LossConfig& cfg, std::size_t batch_size);

/// Mean per-RoI loss over a batch recorded on one tape; zero for an empty batch.
num::Var loss(num::Tape& tape, std::span<const RoiOutput> outs, std::span<const Box3D> proposals,
              std::span<const Target> targets, const LossConfig& cfg);

}  // namespace pyrhead
