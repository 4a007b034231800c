#include "pyrhead/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "pyrhead/darp.hpp"
#include "pyrhead/errors.hpp"
#include "pyrhead/head.hpp"
#include "pyrhead/operators.hpp"
#include "pyrhead/synth.hpp"

namespace pyrhead {

using num::ParameterSet;
using num::Rng;
using num::Tape;
using num::Tensor;
using num::Var;

double gradient_rel_error(double analytic, double numeric, double floor) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

double max_gradient_rel_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) throw DimensionError("gradient shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, gradient_rel_error(analytic[i], numeric[i], floor));
  }
  return worst;
}

namespace {

using LossFn = std::function<Var(Tape&)>;

struct Probe {
  ParameterSet::Slot slot;
  std::size_t index;
};

num::Gradients analytic_grads(const ParameterSet& ps, const LossFn& fn) {
  Tape tape(&ps);
  const Var l = fn(tape);
  tape.backward(l);
  return tape.parameter_grads();
}

void run_probes(GradCheckGroup& g, ParameterSet& ps, const LossFn& fn, const num::Gradients& analytic,
                const std::vector<Probe>& probes, const GradCheckOptions& o) {
  for (const Probe& p : probes) {
    double& x = ps[p.slot].value[p.index];
    const double x0 = x;
    auto eval = [&](double v) {
      x = v;
      Tape tape(&ps);
      return fn(tape).value()[0];
    };
    auto central = [&](double h) { return (eval(x0 + h) - eval(x0 - h)) / (2.0 * h); };
    const double a = analytic[p.slot][p.index];
    double e = gradient_rel_error(a, central(o.h), o.floor);
    if (e >= o.tolerance) {
      const double e2 = gradient_rel_error(a, central(o.h * 1e-2), o.floor);
      if (e2 < e) {
        e = e2;
        ++g.retried;
      }
    }
    x = x0;
    g.max_rel_error = std::max(g.max_rel_error, e);
    ++g.entries;
  }
}

std::vector<Probe> all_probes(const ParameterSet& ps, const std::function<bool(const std::string&)>& keep) {
  std::vector<Probe> out;
  for (std::size_t s = 0; s < ps.size(); ++s) {
    if (!keep(ps[s].name)) continue;
    for (std::size_t i = 0; i < ps[s].value.size(); ++i) out.push_back({s, i});
  }
  return out;
}

std::vector<Probe> sampled_probes(const ParameterSet& ps, const std::function<bool(const std::string&)>& keep,
                                  std::size_t per_tensor, Rng& rng) {
  std::vector<Probe> out;
  for (std::size_t s = 0; s < ps.size(); ++s) {
    if (!keep(ps[s].name)) continue;
    std::vector<std::size_t> idx(ps[s].value.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_tensor, idx.size()));
    for (std::size_t i : idx) out.push_back({s, i});
  }
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }
bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

GradCheckGroup check_all(const std::string& name, ParameterSet& ps, const LossFn& fn, const GradCheckOptions& o) {
  GradCheckGroup g{name};
  run_probes(g, ps, fn, analytic_grads(ps, fn), all_probes(ps, [](const std::string&) { return true; }), o);
  return g;
}

// magnitudes in [lo,hi], random sign
Tensor away_from_zero(num::Shape shape, double lo, double hi, Rng& rng) {
  Tensor t = num::random_uniform(std::move(shape), lo, hi, rng);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.storage()) v = sign(rng) ? v : -v;
  return t;
}

// sum(out * R) with a fixed random R
Var project(Tape& tape, Var out, const Tensor& r) { return num::sum(num::mul(out, tape.constant(r))); }

struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

std::vector<OpCase> op_cases(Rng& rng) {
  auto u = [&](num::Shape s, double lo = -1.0, double hi = 1.0) { return num::random_uniform(std::move(s), lo, hi, rng); };
  std::vector<OpCase> c;
  using V = const std::vector<Var>&;
  c.push_back({"op.add", {u({4, 3}), u({1, 3})}, [](Tape&, V v) { return num::add(v[0], v[1]); }});
  c.push_back({"op.sub", {u({4, 3}), u({4, 1})}, [](Tape&, V v) { return num::sub(v[0], v[1]); }});
  c.push_back({"op.mul", {u({4, 3}), u({4, 3})}, [](Tape&, V v) { return num::mul(v[0], v[1]); }});
  c.push_back({"op.mul_scalar", {u({4, 3}), u({1})}, [](Tape&, V v) { return num::mul(v[0], v[1]); }});
  c.push_back({"op.div", {u({4, 3}), away_from_zero({1, 3}, 0.5, 2.0, rng)}, [](Tape&, V v) { return num::div(v[0], v[1]); }});
  c.push_back({"op.neg", {u({3, 2})}, [](Tape&, V v) { return num::neg(v[0]); }});
  c.push_back({"op.scale", {u({3, 2})}, [](Tape&, V v) { return num::scale(v[0], 2.5); }});
  c.push_back({"op.shift", {u({3, 2})}, [](Tape&, V v) { return num::shift(v[0], 0.7); }});
  c.push_back({"op.one_minus", {u({3, 2})}, [](Tape&, V v) { return num::one_minus(v[0]); }});
  c.push_back({"op.relu", {away_from_zero({4, 3}, 0.1, 1.0, rng)}, [](Tape&, V v) { return num::relu(v[0]); }});
  c.push_back({"op.sigmoid", {u({4, 3}, -4, 4)}, [](Tape&, V v) { return num::sigmoid(v[0]); }});
  c.push_back({"op.exp", {u({4, 3})}, [](Tape&, V v) { return num::exp(v[0]); }});
  c.push_back({"op.log", {u({4, 3}, 0.5, 2.0)}, [](Tape&, V v) { return num::log(v[0]); }});
  c.push_back({"op.softplus", {u({4, 3}, -4, 4)}, [](Tape&, V v) { return num::softplus(v[0]); }});
  c.push_back({"op.square", {u({4, 3})}, [](Tape&, V v) { return num::square(v[0]); }});
  {
    Tensor x = away_from_zero({4, 4}, 0.1, 0.9, rng);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] += x[i] > 0 ? 1.0 : -1.0;  // half of them in the linear part
    c.push_back({"op.smooth_l1", {x}, [](Tape&, V v) { return num::smooth_l1(v[0]); }});
  }
  {
    Tensor x = away_from_zero({4, 3}, 0.1, 1.0, rng);
    for (double& v : x.storage()) v += 0.2;
    c.push_back({"op.clamp_min", {x}, [](Tape&, V v) { return num::clamp_min(v[0], 0.2); }});
  }
  c.push_back({"op.matmul", {u({4, 5}), u({5, 3})}, [](Tape&, V v) { return num::matmul(v[0], v[1]); }});
  c.push_back({"op.matmul_wide", {u({2, 7}), u({7, 6})}, [](Tape&, V v) { return num::matmul(v[0], v[1]); }});
  c.push_back({"op.linear", {u({4, 5}), u({5, 3}), u({3})}, [](Tape&, V v) { return num::linear(v[0], v[1], v[2]); }});
  c.push_back({"op.sum", {u({4, 3})}, [](Tape&, V v) { return num::sum(v[0]); }});
  c.push_back({"op.mean", {u({4, 3})}, [](Tape&, V v) { return num::mean(v[0]); }});
  c.push_back({"op.mean_rows", {u({5, 3})}, [](Tape&, V v) { return num::mean_rows(v[0]); }});
  c.push_back({"op.softmax", {u({6}, -2, 2)}, [](Tape&, V v) { return num::softmax(v[0]); }});
  c.push_back({"op.reshape", {u({4, 3})}, [](Tape&, V v) { return num::reshape(v[0], {3, 4}); }});
  c.push_back({"op.concat_cols", {u({4, 2}), u({4, 3})},
               [](Tape&, V v) { return num::concat_cols(std::vector<Var>{v[0], v[1], v[0]}); }});
  c.push_back({"op.slice_cols", {u({4, 5})}, [](Tape&, V v) { return num::slice_cols(v[0], 1, 3); }});
  c.push_back({"op.gather_rows", {u({5, 3})}, [](Tape&, V v) {
                 const std::vector<std::size_t> rows{0, 2, 2, 4, 0, 1};
                 return num::gather_rows(v[0], rows);
               }});
  static const std::vector<std::size_t> seg{0, 3, 3, 7};
  c.push_back({"op.segment_softmax", {u({7, 2}, -2, 2)}, [](Tape&, V v) { return num::segment_softmax(v[0], seg); }});
  c.push_back({"op.segment_weighted_sum", {u({7, 2}), u({7, 4})},
               [](Tape&, V v) { return num::segment_weighted_sum(v[0], v[1], seg); }});
  {
    // distinct values spaced well beyond the probe step
    std::vector<double> vals(21);
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.1 * static_cast<double>(i) - 1.0;
    std::shuffle(vals.begin(), vals.end(), rng);
    c.push_back({"op.segment_max", {Tensor({7, 3}, vals)}, [](Tape&, V v) { return num::segment_max(v[0], seg); }});
  }
  // one input reused along two paths
  c.push_back({"op.reuse", {u({3, 3})}, [](Tape&, V v) { return num::add(num::mul(v[0], v[0]), num::sigmoid(v[0])); }});
  return c;
}

GradCheckGroup check_op(const OpCase& oc, Rng& rng, const GradCheckOptions& o) {
  ParameterSet ps;
  std::vector<ParameterSet::Slot> slots;
  for (std::size_t i = 0; i < oc.inputs.size(); ++i) slots.push_back(ps.add("in" + std::to_string(i), oc.inputs[i]));
  Tensor r;
  {
    Tape probe(&ps);
    std::vector<Var> vars;
    for (auto s : slots) vars.push_back(probe.param(s));
    r = num::random_uniform(oc.build(probe, vars).value().shape(), -1.0, 1.0, rng);
  }
  const LossFn fn = [&](Tape& tape) {
    std::vector<Var> vars;
    for (auto s : slots) vars.push_back(tape.param(s));
    return project(tape, oc.build(tape, vars), r);
  };
  return check_all(oc.name, ps, fn, o);
}

// Hand-built neighbor batch: segment sizes as given, distances drawn in [dlo, dhi].
NeighborBatch make_batch(const std::vector<std::size_t>& sizes, std::size_t d, double dlo, double dhi,
                         double gather_radius, Rng& rng) {
  NeighborBatch nb;
  std::size_t m = 0;
  for (std::size_t s : sizes) m += s;
  nb.rel_pos = Tensor({m, 3});
  nb.distances = Tensor({m, 1});
  nb.feats = num::random_normal({m, d}, 1.0, rng);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> dist(dlo, dhi);
  std::size_t row = 0;
  for (std::size_t s : sizes) {
    nb.grid_points.push_back({n01(rng), n01(rng), n01(rng)});
    for (std::size_t i = 0; i < s; ++i, ++row) {
      Vec3 dir{n01(rng), n01(rng), n01(rng)};
      const double len = dist(rng);
      dir = dir * (len / norm(dir));
      nb.rel_pos.at(row, 0) = dir.x;
      nb.rel_pos.at(row, 1) = dir.y;
      nb.rel_pos.at(row, 2) = dir.z;
      nb.distances[row] = norm(dir);
      nb.ids.push_back(static_cast<PointId>(row));
    }
    nb.offsets.push_back(row);
  }
  nb.gather_radius = gather_radius;
  return nb;
}

std::vector<GradCheckGroup> check_operators(Rng& rng, const GradCheckOptions& o) {
  std::vector<GradCheckGroup> groups;
  const std::size_t d = 5;
  const std::vector<std::size_t> sizes{3, 0, 5, 1};

  using Op = std::function<Var(Tape&, const NeighborBatch&, Var, const AttentionParams&)>;
  const std::vector<std::pair<std::string, Op>> attn_ops{
      {"operator.graph", [](Tape& t, const NeighborBatch& nb, Var f, const AttentionParams& p) { return graph_feature(t, nb, f, p); }},
      {"operator.attention", [](Tape& t, const NeighborBatch& nb, Var f, const AttentionParams& p) { return attention_feature(t, nb, f, p); }},
      {"operator.transformer", [](Tape& t, const NeighborBatch& nb, Var f, const AttentionParams& p) { return point_transformer_feature(t, nb, f, p); }},
      {"operator.unified", [](Tape& t, const NeighborBatch& nb, Var f, const AttentionParams& p) { return roi_grid_attention(t, nb, f, p); }},
      {"operator.unified_fixed_gates", [](Tape& t, const NeighborBatch& nb, Var f, const AttentionParams& p) {
         return roi_grid_attention(t, nb, f, p, GateOverride{0.3, 0.6, 0.8, 0.2});
       }},
  };

  {
    const NeighborBatch nb = make_batch(sizes, d, 0.1, 1.5, 1.6, rng);
    ParameterSet ps;
    const num::Mlp mlp = num::Mlp::create(ps, "pool", {d + 3, 8, 8}, rng);
    const auto fslot = ps.add("feats", nb.feats);
    const Tensor r = num::random_uniform({sizes.size(), 8}, -1.0, 1.0, rng);
    groups.push_back(check_all("operator.pool", ps, [&](Tape& t) { return project(t, pool_feature(t, nb, t.param(fslot), mlp), r); }, o));
  }
  for (const auto& [name, op] : attn_ops) {
    const NeighborBatch nb = make_batch(sizes, d, 0.1, 1.5, 1.6, rng);
    ParameterSet ps;
    const AttentionParams ap = AttentionParams::create(ps, "attn", d, 8, 2, rng);
    const auto fslot = ps.add("feats", nb.feats);
    const Tensor r = num::random_uniform({sizes.size(), 8}, -1.0, 1.0, rng);
    groups.push_back(check_all(name, ps, [&](Tape& t) { return project(t, op(t, nb, t.param(fslot), ap), r); }, o));
  }
  {
    // r = 1, tau = 0.05: every neighbor lies at least 2 tau inside r + 5 tau
    const double tau = 0.05;
    const double r0 = 1.0;
    const NeighborBatch base = make_batch({4, 0, 6, 2}, d, 0.2, r0 + 3.0 * tau, extended_radius(r0, tau), rng);
    ParameterSet ps;
    const AttentionParams ap = AttentionParams::create(ps, "attn", d, 8, 2, rng);
    const auto fslot = ps.add("feats", base.feats);
    const auto rslot = ps.add("radius", Tensor::vector({r0}));
    const Tensor r = num::random_uniform({4, 8}, -1.0, 1.0, rng);
    for (const auto& [suffix, gates] : std::vector<std::pair<std::string, std::optional<GateOverride>>>{
             {"", std::nullopt}, {"_fixed_gates", GateOverride{0.3, 0.6, 0.8, 0.2}}}) {
      const LossFn fn = [&, gates = gates](Tape& t) {
        const Var radius = t.param(rslot);
        NeighborBatch nb = base;
        nb.gather_radius = extended_radius(radius.value()[0], tau);
        return project(t, roi_grid_attention_darp(t, nb, t.param(fslot), ap, radius, tau, gates), r);
      };
      groups.push_back(check_all("operator.darp" + suffix, ps, fn, o));
    }
  }
  return groups;
}

GradCheckGroup check_radius_head(Rng& rng, const GradCheckOptions& o) {
  ParameterSet ps;
  const std::size_t width = 16;
  const RadiusHeadParams rh = RadiusHeadParams::create(ps, "radius", width, 8, {0.8, 1.6, 2.4, 3.2, 6.4}, 0.05, rng);
  // zero final layer would leave the hidden layer without gradient
  const auto& last = rh.mlp.layers().back();
  ps[last.weight].value = num::random_uniform(ps[last.weight].value.shape(), -0.1, 0.1, rng);
  ps[last.bias].value = num::random_uniform(ps[last.bias].value.shape(), -0.1, 0.1, rng);
  const auto cslot = ps.add("ctx", num::random_normal({1, width}, 1.0, rng));
  const Tensor r = num::random_uniform({rh.levels()}, -1.0, 1.0, rng);
  const LossFn fn = [&](Tape& t) {
    const Var off = radius_offsets(t, t.param(cslot), rh);
    std::vector<Var> radii;
    for (std::size_t l = 0; l < rh.levels(); ++l) radii.push_back(effective_radius(t, off, l, rh));
    return project(t, num::reshape(num::concat_cols(radii), {rh.levels()}), r);
  };
  return check_all("darp.radius_head", ps, fn, o);
}

GradCheckGroup check_context(Rng& rng, const GradCheckOptions& o) {
  const std::size_t d = 4;
  std::vector<Vec3> coords;
  std::uniform_real_distribution<double> xy(-5.0, 5.0);
  std::uniform_real_distribution<double> z(0.0, 2.0);
  for (int i = 0; i < 60; ++i) coords.push_back({xy(rng), xy(rng), z(rng)});
  const PointSet pset(coords, num::random_normal({coords.size(), d}, 1.0, rng));
  const SpatialIndex idx(pset, 1.0);
  const Box3D roi = Box3D::from_center({0.3, -0.2, 0.8}, {1.8, 4.2, 1.5}, 0.4);
  ParameterSet ps;
  const ContextAggregatorParams cp = ContextAggregatorParams::create(ps, "context", d, 8, 6, {2.4, 4.8}, rng);
  const Tensor r = num::random_uniform({1, cp.width()}, -1.0, 1.0, rng);
  return check_all("darp.context", ps, [&](Tape& t) { return project(t, context_embedding(t, roi, pset, idx, cp), r); }, o);
}

// Smallest |distance - (r + 5 tau)| over grid points of every level and RoI.
double boundary_margin(const PyramidHead& head, const PointSet& ps, const SpatialIndex& idx,
                       const std::vector<Box3D>& rois, double tau, std::vector<std::size_t>* offenders) {
  double margin = std::numeric_limits<double>::infinity();
  for (const Box3D& roi : rois) {
    Tape tape(&head.params());
    const auto radii = head.predict_radii(tape, roi, ps, idx);
    for (std::size_t l = 0; l < radii.size(); ++l) {
      const double cut = extended_radius(radii[l].value()[0], tau);
      for (const Vec3& g : pyramid_grid_points(roi, head.config().pyramid.levels[l])) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
          const double gap = std::abs(distance(ps.coords[i], g) - cut);
          if (gap < 2.0 * tau && offenders) offenders->push_back(i);
          margin = std::min(margin, gap);
        }
      }
    }
  }
  return margin;
}

std::vector<GradCheckGroup> check_head(const GradCheckOptions& o) {
  HeadConfig cfg = HeadConfig::standard();
  const double tau = 1e-3;
  const Box3D box_a = Box3D::from_center({0.0, 0.0, 0.75}, {1.8, 4.2, 1.5}, 0.3);
  const Box3D box_b = Box3D::from_center({3.0, 2.0, 0.8}, {1.7, 4.0, 1.6}, -0.8);
  const std::vector<Box3D> rois{Box3D::from_center({0.1, -0.15, 0.78}, {1.9, 4.0, 1.45}, 0.36), box_b};
  const std::vector<Target> targets{{true, box_a}, {false, {}}};

  for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
    Rng rng(o.seed * 7919 + attempt);
    PyramidHead head(cfg, o.seed + attempt);
    ParameterSet& ps = head.params();
    for (const char* n : {"darp.radius.1.weight", "darp.radius.1.bias"}) {
      auto& v = ps[*ps.find(n)].value;
      v = num::random_uniform(v.shape(), -0.02, 0.02, rng);
    }

    std::uniform_real_distribution<double> ux(-3.0, 6.0);
    std::uniform_real_distribution<double> uy(-4.0, 5.0);
    std::uniform_real_distribution<double> uz(0.0, 2.0);
    auto sample = [&] {
      // most points on or near the two boxes
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      if (u01(rng) < 0.7) {
        const Box3D& b = u01(rng) < 0.6 ? box_a : box_b;
        return b.to_world({u01(rng) * b.extents.x, u01(rng) * b.extents.y, u01(rng) * b.extents.z});
      }
      return Vec3{ux(rng), uy(rng), uz(rng)};
    };
    std::vector<Vec3> coords(50);
    for (auto& c : coords) c = sample();

    bool clean = false;
    PointSet pset;
    SpatialIndex idx;
    for (int iter = 0; iter < 200; ++iter) {
      pset = PointSet(coords, point_features(coords));
      idx = SpatialIndex(pset, kIndexCell);
      std::vector<std::size_t> bad;
      boundary_margin(head, pset, idx, rois, tau, &bad);
      if (bad.empty()) {
        clean = true;
        break;
      }
      std::sort(bad.begin(), bad.end());
      bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
      for (std::size_t i : bad) coords[i] = sample();
    }
    if (!clean) continue;

    const LossFn fn = [&](Tape& t) {
      std::vector<RoiOutput> outs;
      for (const Box3D& roi : rois) outs.push_back(head.forward(t, roi, pset, idx, tau));
      return loss(t, outs, rois, targets, cfg.loss);
    };
    const num::Gradients analytic = analytic_grads(ps, fn);

    auto level_part = [](const std::string& n) {
      // levelN.attention.<part>.weight
      const auto a = n.find('.');
      const auto b = n.find('.', a + 1);
      const auto c = n.find('.', b + 1);
      return n.substr(b + 1, c - b - 1);
    };
    const std::vector<std::pair<std::string, std::function<bool(const std::string&)>>> groups{
        {"head.gates", [&](const std::string& n) { return contains(n, ".attention.") && starts_with(level_part(n), "gate_"); }},
        {"head.projections", [&](const std::string& n) { return contains(n, ".attention.") && !starts_with(level_part(n), "gate_"); }},
        {"head.context", [](const std::string& n) { return starts_with(n, "darp.context."); }},
        {"head.radius", [](const std::string& n) { return starts_with(n, "darp.radius."); }},
        {"head.reduction", [](const std::string& n) { return contains(n, ".reduce."); }},
        {"head.fusion", [](const std::string& n) { return starts_with(n, "fusion."); }},
        {"head.outputs", [](const std::string& n) { return starts_with(n, "cls.") || starts_with(n, "reg."); }},
    };
    std::vector<GradCheckGroup> out;
    for (const auto& [name, keep] : groups) {
      GradCheckGroup g{name};
      run_probes(g, ps, fn, analytic, sampled_probes(ps, keep, o.head_samples, rng), o);
      out.push_back(g);
    }
    return out;
  }
  throw NumericError("could not place head gradient-check points away from the radius boundary");
}

}  // namespace

std::vector<GradCheckGroup> run_gradcheck(const GradCheckOptions& opts) {
  if (!(opts.h > 0.0) || !(opts.floor > 0.0) || !(opts.tolerance > 0.0)) {
    throw ParameterError("gradient check needs positive step, floor and tolerance");
  }
  Rng rng(opts.seed);
  std::vector<GradCheckGroup> groups;
  for (const OpCase& oc : op_cases(rng)) groups.push_back(check_op(oc, rng, opts));
  for (auto& g : check_operators(rng, opts)) groups.push_back(std::move(g));
  groups.push_back(check_radius_head(rng, opts));
  groups.push_back(check_context(rng, opts));
  for (auto& g : check_head(opts)) groups.push_back(std::move(g));
  return groups;
}

}  // namespace pyrhead
