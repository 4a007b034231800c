#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pyrhead/head.hpp"
#include "pyrhead/spatial.hpp"

namespace pyrhead {

inline constexpr std::size_t kPointFeatureWidth = 8;

struct JitterConfig {
  double center = 0.3;  // uniform +-, per axis
  double scale_lo = 0.85;
  double scale_hi = 1.18;
  double yaw = 0.15;  // uniform +-
};

enum class ProposalKind { object, distractor, background };
std::string to_string(ProposalKind k);

struct SceneConfig {
  double extent = 40.0;  // square side in meters, sensor at the center
  double sensor_height = 1.8;
  std::size_t num_objects = 4;
  /// Unlabelled car-shaped shells standing beside a tall slab. Locally they
  /// look like objects; only the slab 1.5-3 m away tells them apart.
  std::size_t num_distractors = 3;
  std::size_t min_points = 3;
  std::size_t max_points = 500;
  double clutter_density = 0.5;  // points per m^2 of ground
  double clutter_height = 0.6;
  double noise = 0.02;
  bool allow_empty_objects = false;
  std::size_t proposals_per_object = 2;
  std::size_t background_proposals = 3;
  JitterConfig jitter;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  PointSet points;
  std::vector<Box3D> objects;                  // ground truth
  std::vector<std::size_t> object_points;      // sampled surface points per object
  std::vector<Box3D> proposals;
  std::vector<Target> targets;                 // aligned with proposals
  std::vector<ProposalKind> kinds;             // aligned with proposals
};

Scene generate_scene(const SceneConfig& cfg);

/// Per-point local occupancy descriptor of width kPointFeatureWidth:
/// log1p neighbor counts at 0.2/0.4/0.8 m, z/2, centroid offset of the
/// 0.8 m neighborhood, fraction of that neighborhood above the point.
num::Tensor point_features(std::span<const Vec3> coords);

/// Points of `ps` inside `box`.
std::size_t interior_count(const PointSet& ps, const SpatialIndex& idx, const Box3D& box);

/// Neighbor rows the pyramid gathers for `roi` at the fixed per-level radii.
std::size_t gathered_count(const PointSet& ps, const SpatialIndex& idx, const Box3D& roi, const PyramidConfig& cfg);

inline constexpr std::size_t kSparsityBuckets = 5;
/// [0,10) [10,50) [50,100) [100,500) [500,inf)
std::size_t sparsity_bucket(std::size_t count);
std::string sparsity_bucket_label(std::size_t bucket);

struct SparsityRow {
  std::string bucket;
  std::size_t interior = 0;  // objects whose interior count falls in the bucket
  std::size_t gathered = 0;  // objects whose pyramid-gathered count falls in it
};

/// Histogram over all ground-truth boxes; empty when no scenes are given.
std::vector<SparsityRow> sparsity_stats(std::span<const Scene> scenes, const PyramidConfig& cfg);
std::string sparsity_csv(std::span<const SparsityRow> rows);

/// A scene together with its spatial index.
struct PreparedScene {
  Scene scene;
  SpatialIndex index;
};
inline constexpr double kIndexCell = 0.8;
PreparedScene prepare(Scene scene);

struct ToyTaskConfig {
  SceneConfig scene;
  std::size_t train_scenes = 200;
  std::size_t eval_scenes = 50;
  std::uint64_t seed = 0;
};

struct ToyData {
  std::vector<PreparedScene> train;
  std::vector<PreparedScene> eval;
};

/// Scene seeds are derived from the task seed; training and evaluation
/// scenes never share a seed.
ToyData generate_toy_data(const ToyTaskConfig& cfg, std::size_t threads = 1);

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 8;
  double lr = 0.01;
  double momentum = 0.9;
  /// Gradient-norm cap applied before the update, separately to the radius
  /// head and to all other parameters; 0 disables.
  double clip_norm = 1.0;
  /// Learning-rate multiplier for the radius head.
  double radius_lr_scale = 0.1;
  std::size_t monitor_rois = 64;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct StepRecord {
  std::size_t step = 0;
  double tau = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double radius_grad_norm = 0.0;
  std::vector<double> radii;  // per level, batch mean; empty without DARP
};

struct TrainResult {
  std::vector<StepRecord> steps;
  double initial_loss = 0.0;  // fixed monitor set, before the first update
  double final_loss = 0.0;    // same set after the last update
  std::vector<double> initial_radii;
  std::vector<double> final_radii;
  double max_radius_shift = 0.0;  // max over levels |final mean r_eff - r_pre|
};

/// Gradient descent with momentum on the head loss. Throws NumericError if
/// the loss turns non-finite.
TrainResult train_toy(PyramidHead& head, std::span<const PreparedScene> scenes, const TrainConfig& cfg);

struct BucketStats {
  std::size_t rois = 0;
  double accuracy = 0.0;
  std::size_t positives = 0;
  double mean_iou = 0.0;
};

struct EvalResult {
  std::size_t rois = 0;
  double accuracy = 0.0;
  double base_rate = 0.0;  // fraction of positive labels
  std::size_t positives = 0;
  double mean_iou = 0.0;   // refined vs target box, over positives
  double recall = 0.0;     // positives with refined IoU >= threshold
  std::array<BucketStats, kSparsityBuckets> buckets{};
};

EvalResult evaluate(const PyramidHead& head, std::span<const PreparedScene> scenes, double iou_threshold = 0.7,
                    std::size_t threads = 1);

}  // namespace pyrhead
