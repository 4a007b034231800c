#include <gtest/gtest.h>

#include <numbers>

#include "criteria.hpp"
#include "pyrhead/errors.hpp"
#include "pyrhead/geometry.hpp"
#include "pyrhead/head.hpp"

using namespace pyrhead;

TEST(Grid, TwoByTwoCube) {
  const Box3D box{{0, 0, 0}, {2, 2, 2}, 0.0};
  const auto pts = grid_points(box, {2, 2, 2});
  ASSERT_EQ(pts.size(), 8u);
  EXPECT_EQ(pts.front(), (Vec3{0.5, 0.5, 0.5}));
  EXPECT_EQ(pts[1], (Vec3{0.5, 0.5, 1.5}));
  EXPECT_EQ(pts.back(), (Vec3{1.5, 1.5, 1.5}));
}

TEST(Grid, MatchesLoopOracle) { EXPECT_LT(criteria::geometry_max_error(1000, 11), 1e-12); }

TEST(Grid, PointCounts) {
  EXPECT_EQ(pyramid_point_count(PyramidConfig::standard()), 409u);
  EXPECT_EQ(pyramid_point_count(HeadConfig::single_level_baseline().pyramid), 216u);
  PyramidConfig two = PyramidConfig::standard();
  two.levels.resize(2);
  EXPECT_EQ(pyramid_point_count(two), 280u);
}

TEST(Grid, CenterAnchorKeepsCentroid) {
  const Box3D box = Box3D::from_center({3, -2, 1}, {1.8, 4.0, 1.5}, 0.7);
  for (const auto& lc : PyramidConfig::standard().levels) {
    Vec3 mean{};
    const auto pts = pyramid_grid_points(box, lc);
    for (const auto& p : pts) mean = mean + p * (1.0 / static_cast<double>(pts.size()));
    EXPECT_NEAR(mean.x, 3.0, 1e-12);
    EXPECT_NEAR(mean.y, -2.0, 1e-12);
  }
  PyramidLevelConfig corner = PyramidConfig::standard().levels[4];
  corner.anchor = AnchorMode::corner;
  const Box3D flat{{0, 0, 0}, {2, 4, 2}, 0.0};
  const auto p = pyramid_grid_points(flat, corner);
  EXPECT_EQ(p.front(), (Vec3{4.0, 8.0, 1.0}));
}

TEST(Grid, InvalidInputs) {
  EXPECT_THROW(grid_points({{0, 0, 0}, {0, 1, 1}, 0.0}, {2, 2, 2}), ParameterError);
  EXPECT_THROW(grid_points({{0, 0, 0}, {1, 1, 1}, 4.0}, {2, 2, 2}), ParameterError);
  EXPECT_THROW(grid_points({{0, 0, 0}, {1, 1, 1}, 0.0}, {0, 2, 2}), ParameterError);
  PyramidConfig cfg = PyramidConfig::standard();
  cfg.levels[0].ratios = {1.5, 1.5, 1.0};
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = PyramidConfig::standard();
  std::swap(cfg.levels[2], cfg.levels[3]);
  EXPECT_THROW(cfg.validate(), ParameterError);
  EXPECT_THROW(anchor_mode_from_string("middle"), ParameterError);
}

TEST(Box, FramesAndContainment) {
  const Box3D b = Box3D::from_center({1, 2, 0.5}, {2, 4, 1}, 0.9);
  const Vec3 w{2.2, 1.1, 0.3};
  const Vec3 back = b.to_world(b.to_canonical(w));
  EXPECT_NEAR(back.x, w.x, 1e-14);
  EXPECT_NEAR(back.y, w.y, 1e-14);
  EXPECT_TRUE(b.contains(b.center()));
  EXPECT_TRUE(b.contains(b.to_world(b.corner)));
  EXPECT_FALSE(b.contains({10, 10, 0}));
  EXPECT_DOUBLE_EQ(wrap_angle(std::numbers::pi), -std::numbers::pi);
  EXPECT_NEAR(wrap_angle(3 * std::numbers::pi + 0.1), -std::numbers::pi + 0.1, 1e-12);
}

TEST(Box, DerotatedIou) {
  const Box3D a = Box3D::from_center({0, 0, 0}, {2, 2, 2}, 0.4);
  EXPECT_DOUBLE_EQ(derotated_iou(a, a), 1.0);
  const Box3D far = Box3D::from_center({10, 0, 0}, {2, 2, 2}, 0.4);
  EXPECT_DOUBLE_EQ(derotated_iou(a, far), 0.0);
  const Box3D half = Box3D::from_center({1, 0, 0}, {2, 2, 2}, 0.0);
  EXPECT_NEAR(derotated_iou(half, Box3D::from_center({0, 0, 0}, {2, 2, 2}, 0.0)), 1.0 / 3.0, 1e-15);
}
