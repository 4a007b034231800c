#include <gtest/gtest.h>

#include <cmath>

#include "pyrhead/errors.hpp"
#include "pyrhead/nn.hpp"
#include "pyrhead/ops.hpp"

using namespace pyrhead;
using namespace pyrhead::num;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace

TEST(Tensor, MatrixView) {
  EXPECT_EQ(Tensor::scalar(2.0).rows(), 1u);
  EXPECT_EQ(Tensor::vector({1, 2, 3}).cols(), 3u);
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m.at(2, 1), 6.0);
  EXPECT_THROW(m.reshaped({4}), DimensionError);
  EXPECT_EQ(m.reshaped({2, 3}).at(1, 0), 4.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({2, 2, 2}).rows(), DimensionError);
}

TEST(Ops, ScalarValues) {
  Tape t;
  EXPECT_DOUBLE_EQ(sigmoid(t.constant(Tensor::scalar(1.0))).value()[0], 0.7310585786300049);
  EXPECT_NEAR(one_minus(sigmoid(t.constant(Tensor::scalar(10.0)))).value()[0], 4.5397868702434395e-05, 1e-16);
  const Var s = softmax(t.constant(Tensor::vector({0.0, std::log(3.0)})));
  EXPECT_NEAR(s.value()[0], 0.25, 1e-15);
  EXPECT_NEAR(s.value()[1], 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(softplus(t.constant(Tensor::scalar(1000.0))).value()[0], 1000.0);
  EXPECT_NEAR(softplus(t.constant(Tensor::scalar(0.0))).value()[0], std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(smooth_l1(t.constant(Tensor::vector({0.5, -3.0}))).value()[1], 2.5);
  EXPECT_DOUBLE_EQ(smooth_l1(t.constant(Tensor::vector({0.5, -3.0}))).value()[0], 0.125);
}

TEST(Ops, SoftmaxShiftInvariant) {
  Tape t;
  const Var a = softmax(t.constant(Tensor::vector({1.0, 2.0, 3.0})));
  const Var b = softmax(t.constant(Tensor::vector({1001.0, 1002.0, 1003.0})));
  EXPECT_LT(max_abs_diff(a.value(), b.value()), 1e-15);
}

TEST(Ops, SharedInputAccumulates) {
  Tape t;
  const Var x = t.variable(Tensor::vector({1.5, -2.0}));
  const Var y = sum(add(mul(x, x), x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
}

TEST(Ops, BroadcastGradientReducesAxis) {
  Tape t;
  const Var a = t.variable(Tensor({3, 2}, 1.0));
  const Var b = t.variable(Tensor::matrix({{2.0, 3.0}}));
  t.backward(sum(mul(a, b)));
  EXPECT_EQ(b.grad().shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(b.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(a.grad().at(2, 1), 3.0);
  EXPECT_THROW(add(a, t.constant(Tensor({2, 2}))), DimensionError);
}

TEST(Ops, MatmulMatchesLoops) {
  Rng rng(3);
  for (auto [n, k, m] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {7, 4, 9}, {16, 33, 5}}) {
    const Tensor a = random_uniform({n, k}, -1, 1, rng);
    const Tensor b = random_uniform({k, m}, -1, 1, rng);
    const Tensor r = random_uniform({n, m}, -1, 1, rng);
    Tape t;
    const Var va = t.variable(a), vb = t.variable(b);
    const Var c = matmul(va, vb);
    EXPECT_LT(max_abs_diff(c.value(), naive_matmul(a, b)), 1e-13);
    t.backward(sum(mul(c, t.constant(r))));
    EXPECT_LT(max_abs_diff(va.grad(), naive_matmul(r, transpose(b))), 1e-13);
    EXPECT_LT(max_abs_diff(vb.grad(), naive_matmul(transpose(a), r)), 1e-13);
  }
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), DimensionError);
}

TEST(Ops, LinearMatchesLoops) {
  Rng rng(4);
  const Tensor x = random_uniform({5, 3}, -1, 1, rng);
  const Tensor w = random_uniform({3, 4}, -1, 1, rng);
  const Tensor b = random_uniform({4}, -1, 1, rng);
  Tape t;
  const Tensor y = linear(t.constant(x), t.constant(w), t.constant(b)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t o = 0; o < 4; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < 3; ++k) s += x.at(i, k) * w.at(k, o);
      EXPECT_NEAR(y.at(i, o), s, 1e-14);
    }
}

TEST(Ops, SegmentsWithEmptyGroups) {
  Tape t;
  const std::vector<std::size_t> off{0, 2, 2, 3};
  const Var v = t.variable(Tensor::matrix({{1, -1}, {3, -2}, {5, 7}}));
  const Var mx = segment_max(v, off);
  EXPECT_EQ(mx.value().rows(), 3u);
  EXPECT_DOUBLE_EQ(mx.value().at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(mx.value().at(0, 1), -1.0);
  EXPECT_DOUBLE_EQ(mx.value().at(1, 0), 0.0);
  const Var sm = segment_softmax(v, off);
  EXPECT_NEAR(sm.value().at(0, 0) + sm.value().at(1, 0), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(sm.value().at(2, 1), 1.0);
  const Var ws = segment_weighted_sum(slice_cols(sm, 0, 1), v, off);
  EXPECT_DOUBLE_EQ(ws.value().at(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(ws.value().at(2, 1), 7.0);
  EXPECT_THROW(segment_max(v, std::vector<std::size_t>{0, 2}), DimensionError);
  t.backward(sum(mx));
  EXPECT_DOUBLE_EQ(v.grad().at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(v.grad().at(0, 0), 0.0);
}

TEST(Ops, NonFiniteAndUnboundInputsRejected) {
  Tape t;
  EXPECT_THROW(softmax(t.constant(Tensor::vector({0.0, std::nan("")}))), NumericError);
  EXPECT_THROW(add(Var{}, t.constant(Tensor::scalar(1.0))), ContractError);
  Tape other;
  EXPECT_THROW(add(t.constant(Tensor::scalar(1.0)), other.constant(Tensor::scalar(1.0))), ContractError);
}

TEST(Tape, ParamsAndBackwardContracts) {
  ParameterSet ps;
  const auto s = ps.add("w", Tensor::vector({2.0}));
  EXPECT_THROW(ps.add("w", Tensor::scalar(0.0)), ParameterError);
  Tape t(&ps);
  EXPECT_EQ(t.param(s).id(), t.param(s).id());
  const Var y = mul(t.param(s), t.param(s));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.parameter_grads()[s][0], 4.0);
  const Var v = t.constant(Tensor({2}));
  EXPECT_THROW(t.backward(v), DimensionError);
  Tape bare;
  EXPECT_THROW(bare.param(0), ContractError);
}

TEST(Nn, InitBoundsAndFiniteDifference) {
  ParameterSet ps;
  Rng rng(0);
  const LinearLayer relu = LinearLayer::create(ps, "a", 24, 8, rng, Activation::relu);
  const LinearLayer plain = LinearLayer::create(ps, "b", 24, 8, rng);
  const LinearLayer zero = LinearLayer::create(ps, "c", 24, 8, rng, Activation::identity, Init::zeros);
  auto maxabs = [&](ParameterSet::Slot s) {
    double m = 0;
    for (double v : ps[s].value.data()) m = std::max(m, std::abs(v));
    return m;
  };
  EXPECT_LE(maxabs(relu.weight), std::sqrt(6.0 / 24.0));
  EXPECT_GT(maxabs(relu.weight), 1.0 / std::sqrt(24.0));
  EXPECT_LE(maxabs(plain.weight), 1.0 / std::sqrt(24.0));
  EXPECT_LE(maxabs(relu.bias), 1.0 / std::sqrt(24.0));
  EXPECT_EQ(maxabs(zero.weight), 0.0);

  const Tensor x = Tensor::vector({0.3, -1.2});
  const Tensor g = finite_diff_grad([](const Tensor& v) { return v[0] * v[0] * v[1]; }, x);
  EXPECT_NEAR(g[0], 2 * 0.3 * -1.2, 1e-9);
  EXPECT_NEAR(g[1], 0.09, 1e-9);
}

TEST(Nn, MlpWidthChecked) {
  ParameterSet ps;
  Rng rng(0);
  const Mlp m = Mlp::create(ps, "m", {4, 6, 2}, rng);
  EXPECT_EQ(m.in_dim(), 4u);
  EXPECT_EQ(m.out_dim(), 2u);
  Tape t(&ps);
  EXPECT_THROW(m(t, t.constant(Tensor({1, 3}))), DimensionError);
  EXPECT_EQ(m(t, t.constant(Tensor({5, 4}))).value().rows(), 5u);
  EXPECT_THROW(Mlp::create(ps, "bad", {4}, rng), DimensionError);
}
