#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pyrhead/errors.hpp"
#include "pyrhead/head.hpp"
#include "pyrhead/synth.hpp"

using namespace pyrhead;

namespace {

const PreparedScene& scene() {
  static const PreparedScene s = [] {
    SceneConfig cfg;
    cfg.seed = 5;
    return prepare(generate_scene(cfg));
  }();
  return s;
}

}  // namespace

TEST(Head, ForwardShapes) {
  const PyramidHead head(HeadConfig::standard(), 1);
  num::Tape t(&head.params());
  const auto& s = scene();
  const RoiOutput out = head.forward(t, s.scene.proposals[0], s.scene.points, s.index, 0.01);
  EXPECT_EQ(out.logit.shape(), (num::Shape{1, 1}));
  EXPECT_EQ(out.residuals.shape(), (num::Shape{1, kResidualCount}));
  EXPECT_EQ(out.feature.shape(), (num::Shape{1, 128}));
  ASSERT_EQ(out.radii.size(), 5u);
  EXPECT_EQ(out.radius_values[3], 3.2);  // zero-initialized offsets
  EXPECT_GT(out.gathered, 0u);
  EXPECT_EQ(head.extract_roi_features(t, s.scene.proposals[0], s.scene.points, s.index, 0).shape(),
            (num::Shape{1, 128}));
}

TEST(Head, BaselineHasOneFixedLevel) {
  const HeadConfig cfg = HeadConfig::single_level_baseline();
  EXPECT_EQ(cfg.pyramid.levels.size(), 1u);
  const PyramidHead head(cfg, 1);
  EXPECT_FALSE(head.radius_head().has_value());
  num::Tape t(&head.params());
  const auto& s = scene();
  const RoiOutput out = head.forward(t, s.scene.proposals[0], s.scene.points, s.index, 0.01);
  EXPECT_TRUE(out.radii.empty());
  EXPECT_EQ(out.feature.shape(), (num::Shape{1, 128}));
}

TEST(Head, PyramidGathersAtLeastBottomLevel) {
  const PyramidHead pyr(HeadConfig::standard(), 2);
  const PyramidHead base(HeadConfig::single_level_baseline(), 2);
  const auto& s = scene();
  for (const Box3D& roi : s.scene.proposals) {
    num::Tape a(&pyr.params()), b(&base.params());
    EXPECT_GE(pyr.forward(a, roi, s.scene.points, s.index, 1e-4).gathered,
              base.forward(b, roi, s.scene.points, s.index, 1e-4).gathered);
  }
}

TEST(Head, EmptyPointSetAndWidthCheck) {
  const PyramidHead head(HeadConfig::standard(), 1);
  const PointSet empty;
  const SpatialIndex idx(empty, 0.8);
  num::Tape t(&head.params());
  const RoiOutput out = head.forward(t, Box3D::from_center({0, 0, 1}, {2, 4, 1.5}, 0), empty, idx, 0.01);
  EXPECT_TRUE(out.logit.value().all_finite());
  EXPECT_EQ(out.gathered, 0u);
  const PointSet narrow({{0, 0, 0}}, num::Tensor({1, 3}));
  const SpatialIndex idx2(narrow, 0.8);
  EXPECT_THROW(head.forward(t, Box3D::from_center({0, 0, 1}, {2, 4, 1.5}, 0), narrow, idx2, 0.01), DimensionError);
  EXPECT_THROW(head.forward(t, Box3D::from_center({0, 0, 1}, {2, 4, 1.5}, 0), empty, idx, 0.0), ParameterError);
}

TEST(Head, SeededConstruction) {
  const PyramidHead a(HeadConfig::standard(), 9), b(HeadConfig::standard(), 9), c(HeadConfig::standard(), 10);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    differs = differs || !(a.params()[i].value == c.params()[i].value);
  }
  EXPECT_TRUE(differs);
}

TEST(Head, RadiusReceivesGradient) {
  PyramidHead head(HeadConfig::standard(), 4);
  const auto& s = scene();
  num::Tape t(&head.params());
  std::vector<RoiOutput> outs;
  std::vector<Box3D> rois(s.scene.proposals.begin(), s.scene.proposals.begin() + 4);
  std::vector<Target> targets(s.scene.targets.begin(), s.scene.targets.begin() + 4);
  for (const auto& r : rois) outs.push_back(head.forward(t, r, s.scene.points, s.index, 0.02));
  t.backward(loss(t, outs, rois, targets, head.config().loss));
  const auto grads = t.parameter_grads();
  const auto slot = head.params().find("darp.radius.1.bias");
  ASSERT_TRUE(slot.has_value());
  EXPECT_GT(num::l2_norm(grads[*slot]), 0.0);
}

TEST(Head, InvalidConfigs) {
  HeadConfig cfg = HeadConfig::standard();
  cfg.attention.heads = 5;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = HeadConfig::standard();
  cfg.schema_version = 2;
  EXPECT_THROW(cfg.validate(), FormatError);
  cfg = HeadConfig::standard();
  cfg.attention.gates = kGraphGates;
  EXPECT_NO_THROW(PyramidHead(cfg, 0));
}

TEST(Refine, ZeroResidualsKeepBox) {
  const Box3D roi = Box3D::from_center({1, 2, 3}, {2, 4, 1.5}, 0.3);
  const std::vector<double> zero(7, 0.0);
  const Detection d = refine(roi, 0.0, zero);
  EXPECT_DOUBLE_EQ(d.score, 0.5);
  EXPECT_NEAR(derotated_iou(d.box, roi), 1.0, 1e-12);
  EXPECT_THROW(refine(roi, 0.0, std::vector<double>(6)), DimensionError);
}

TEST(Refine, AppliesResiduals) {
  const Box3D roi = Box3D::from_center({0, 0, 0}, {2, 4, 1.5}, 3.0);
  const std::vector<double> r{1.0, -0.5, 0.25, std::log(2.0), 0.0, 0.0, 0.5};
  const Detection d = refine(roi, 2.0, r);
  EXPECT_NEAR(d.box.center().x, 1.0, 1e-12);
  EXPECT_NEAR(d.box.center().y, -0.5, 1e-12);
  EXPECT_NEAR(d.box.center().z, 0.25, 1e-12);
  EXPECT_NEAR(d.box.extents.x, 4.0, 1e-12);
  EXPECT_NEAR(d.box.yaw, 3.5 - 2 * std::numbers::pi, 1e-12);
  EXPECT_NEAR(d.score, 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Refine, TargetsInvertRefine) {
  const Box3D p = Box3D::from_center({1, 1, 0.7}, {1.8, 4.1, 1.5}, 3.0);
  const Box3D g = Box3D::from_center({1.3, 0.8, 0.8}, {1.7, 4.4, 1.6}, -3.05);
  const auto t = residual_targets(p, g);
  const Detection d = refine(p, 0.0, t);
  EXPECT_NEAR(d.box.center().x, g.center().x, 1e-12);
  EXPECT_NEAR(d.box.extents.y, g.extents.y, 1e-12);
  EXPECT_NEAR(d.box.yaw, g.yaw, 1e-12);
  EXPECT_NEAR(derotated_iou(d.box, g), 1.0, 1e-12);
}

TEST(Loss, MatchesHandComputation) {
  num::Tape t;
  const Box3D g = Box3D::from_center({0, 0, 0}, {2, 4, 1.5}, 0.0);
  RoiOutput out;
  out.logit = t.constant(num::Tensor({1, 1}, {0.5}));
  out.residuals = t.constant(num::Tensor({1, 7}, {0.5, 0, 0, 0, 0, 0, 3.0}));
  const LossConfig cfg;
  const double pos = roi_loss(t, out, g, {true, g}, cfg, 2).value()[0];
  const double bce = std::log1p(std::exp(0.5)) - 0.5;
  EXPECT_NEAR(pos, (bce + 2.0 * (0.125 + 2.5)) / 2.0, 1e-14);
  const double neg = roi_loss(t, out, g, {false, {}}, cfg, 1).value()[0];
  EXPECT_NEAR(neg, std::log1p(std::exp(0.5)), 1e-14);
  const Box3D shifted = Box3D::from_center({1.5, 0, 0}, {2, 4, 1.5}, 0.0);
  EXPECT_EQ(classification_label(shifted, {true, g}, 0.55), 0);
  EXPECT_EQ(classification_label(g, {true, g}, 0.55), 1);
  EXPECT_EQ(loss(t, {}, {}, {}, cfg).value()[0], 0.0);
  EXPECT_THROW(roi_loss(t, out, g, {true, g}, cfg, 0), ParameterError);
}
