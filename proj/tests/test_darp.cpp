#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pyrhead/darp.hpp"
#include "pyrhead/errors.hpp"

using namespace pyrhead;

namespace {

PointSet random_points(std::size_t n, std::size_t d, double extent, num::Rng& rng) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng) * 0.2};
  return PointSet(pts, num::random_normal({n, d}, 1.0, rng));
}

}  // namespace

TEST(Context, MatchesOracle) {
  num::Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const PointSet ps = random_points(300, 6, 8.0, rng);
    const SpatialIndex idx(ps, 0.8);
    num::ParameterSet params;
    const auto cp = ContextAggregatorParams::create(params, "c", 6, 12, 10, {2.4, 4.8}, rng);
    const Box3D roi = Box3D::from_center({0.5 * trial - 2.0, 1.0, 0.1}, {1.8, 4.0, 1.5}, 0.2);
    num::Tape t(&params);
    const auto got = context_embedding(t, roi, ps, idx, cp).value();
    ASSERT_EQ(got.shape(), (num::Shape{1, 20}));
    EXPECT_LT(oracle::max_rel_error(got, {oracle::context(roi, ps, params, cp)}), 1e-12);
  }
}

TEST(Context, EmptySurroundingsGiveZeros) {
  num::Rng rng(1);
  const PointSet ps = random_points(50, 4, 1.0, rng);
  const SpatialIndex idx(ps, 0.8);
  num::ParameterSet params;
  const auto cp = ContextAggregatorParams::create(params, "c", 4, 8, 6, {2.4, 4.8}, rng);
  num::Tape t(&params);
  const auto e = context_embedding(t, Box3D::from_center({100, 0, 0}, {1, 1, 1}, 0), ps, idx, cp).value();
  EXPECT_EQ(e.size(), 12u);
  EXPECT_EQ(num::l2_norm(e), 0.0);
  EXPECT_THROW(ContextAggregatorParams::create(params, "bad", 4, 8, 6, {4.8, 2.4}, rng), ParameterError);
}

TEST(RadiusHead, ZeroInitGivesPredefinedRadii) {
  num::Rng rng(3);
  num::ParameterSet params;
  const auto rh = RadiusHeadParams::create(params, "r", 16, 8, {0.8, 1.6, 2.4, 3.2, 6.4}, 0.05, rng);
  num::Tape t(&params);
  const num::Var ctx = t.constant(num::random_normal({1, 16}, 1.0, rng));
  for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(predict_radius(t, ctx, l, rh).value()[0], rh.r_pre[l]);
  EXPECT_THROW(predict_radius(t, ctx, 5, rh), ParameterError);
}

TEST(RadiusHead, ClampsAtMinimum) {
  num::Rng rng(3);
  num::ParameterSet params;
  const auto rh = RadiusHeadParams::create(params, "r", 4, 8, {0.8, 1.6}, 0.05, rng);
  params[rh.mlp.layers().back().bias].value = num::Tensor::vector({-5.0, 0.5});
  num::Tape t(&params);
  const num::Var ctx = t.constant(num::Tensor({1, 4}, 1.0));
  const num::Var off = radius_offsets(t, ctx, rh);
  const num::Var r0 = effective_radius(t, off, 0, rh);
  EXPECT_DOUBLE_EQ(r0.value()[0], 0.05);
  EXPECT_DOUBLE_EQ(effective_radius(t, off, 1, rh).value()[0], 2.1);
  t.backward(r0);
  EXPECT_EQ(num::l2_norm(t.parameter_grads()[rh.mlp.layers().back().bias]), 0.0);
  EXPECT_THROW(RadiusHeadParams::create(params, "bad", 4, 8, {0.8, -1.0}, 0.05, rng), ParameterError);
}

TEST(Schedule, GeometricDecay) {
  const TemperatureSchedule s{0.02, 1e-4, 500};
  EXPECT_DOUBLE_EQ(s.at(0), 0.02);
  EXPECT_DOUBLE_EQ(s.at(500), 1e-4);
  EXPECT_NEAR(s.at(250), 1.4142135623730951e-3, 1e-15);
  for (std::size_t i = 1; i <= 500; ++i) EXPECT_LT(s.at(i), s.at(i - 1));
  EXPECT_DOUBLE_EQ(s.eval(), 1e-4);
  EXPECT_THROW(s.at(501), ParameterError);
  EXPECT_THROW((TemperatureSchedule{1e-4, 0.02, 10}.validate()), ParameterError);
  EXPECT_THROW((TemperatureSchedule{0.02, 1e-4, 0}.validate()), ParameterError);
}
