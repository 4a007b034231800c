#include "pyrhead/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pyrhead/errors.hpp"

namespace pyrhead {

using num::Tape;
using num::Tensor;
using num::Var;

NeighborBatch NeighborBatch::from_bundles(std::span<const NeighborBundle> bundles, std::size_t d) {
  NeighborBatch nb;
  std::size_t m = 0;
  for (const auto& b : bundles) {
    if (b.ids.size() != b.offsets.size() || b.feats.rows() != b.ids.size() ||
        (!b.ids.empty() && b.feats.cols() != d)) {
      throw DimensionError("neighbor bundle arrays disagree in length or feature width");
    }
    m += b.ids.size();
  }
  nb.rel_pos = Tensor({m, 3});
  nb.distances = Tensor({m, 1});
  nb.feats = Tensor({m, d});
  nb.ids.reserve(m);
  std::size_t row = 0;
  for (const auto& b : bundles) {
    nb.grid_points.push_back(b.grid_point);
    std::vector<std::size_t> order(b.ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return b.ids[x] < b.ids[y]; });
    for (std::size_t k : order) {
      nb.ids.push_back(b.ids[k]);
      const Vec3 off = b.offsets[k];
      nb.rel_pos.at(row, 0) = off.x;
      nb.rel_pos.at(row, 1) = off.y;
      nb.rel_pos.at(row, 2) = off.z;
      nb.distances[row] = norm(off);
      std::copy(b.feats.row(k).begin(), b.feats.row(k).end(), nb.feats.row(row).begin());
      ++row;
    }
    nb.offsets.push_back(row);
  }
  return nb;
}

NeighborBatch gather_neighbors(const PointSet& ps, const SpatialIndex& idx, std::span<const Vec3> grid,
                               double radius, std::size_t max_k) {
  const std::size_t d = ps.feature_dim();
  std::vector<std::vector<Neighbor>> found;
  found.reserve(grid.size());
  std::size_t m = 0;
  for (const Vec3& g : grid) {
    auto nbrs = idx.ball_query(g, radius, max_k);
    std::sort(nbrs.begin(), nbrs.end(), [](const Neighbor& a, const Neighbor& b) { return a.id < b.id; });
    m += nbrs.size();
    found.push_back(std::move(nbrs));
  }
  NeighborBatch nb;
  nb.gather_radius = radius;
  nb.grid_points.assign(grid.begin(), grid.end());
  nb.rel_pos = Tensor({m, 3});
  nb.distances = Tensor({m, 1});
  nb.feats = Tensor({m, d});
  nb.ids.reserve(m);
  std::size_t row = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (const Neighbor& n : found[g]) {
      const Vec3 off = ps.coords[n.id] - grid[g];
      nb.ids.push_back(n.id);
      nb.rel_pos.at(row, 0) = off.x;
      nb.rel_pos.at(row, 1) = off.y;
      nb.rel_pos.at(row, 2) = off.z;
      nb.distances[row] = n.distance;
      const auto f = ps.feature(n.id);
      std::copy(f.begin(), f.end(), nb.feats.row(row).begin());
      ++row;
    }
    nb.offsets.push_back(row);
  }
  return nb;
}

AttentionParams AttentionParams::create(num::ParameterSet& params, const std::string& name, std::size_t d_in,
                                        std::size_t d_model, std::size_t heads, num::Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not a multiple of " + std::to_string(heads) +
                         " heads");
  }
  AttentionParams p;
  p.d_in = d_in;
  p.d_model = d_model;
  p.heads = heads;
  p.key = num::LinearLayer::create(params, name + ".key", d_in, d_model, rng);
  p.value = num::LinearLayer::create(params, name + ".value", d_in, d_model, rng);
  p.pos = num::LinearLayer::create(params, name + ".pos", 3, d_model, rng);
  p.weight = num::LinearLayer::create(params, name + ".weight", d_model, heads, rng);
  p.gate_q = num::LinearLayer::create(params, name + ".gate_q", d_model, 1, rng);
  p.gate_k = num::LinearLayer::create(params, name + ".gate_k", d_model, 1, rng);
  p.gate_qk = num::LinearLayer::create(params, name + ".gate_qk", d_model, 1, rng);
  p.gate_v = num::LinearLayer::create(params, name + ".gate_v", d_model, 1, rng);
  return p;
}

void GateOverride::validate() const {
  for (double g : {q, k, qk, v}) {
    if (!(g >= 0.0 && g <= 1.0)) throw ParameterError("gate override values must lie in [0,1]");
  }
}

namespace {

void check_feats(const NeighborBatch& nb, Var feats) {
  const Tensor& f = feats.value();
  if (f.rank() != 2 || f.rows() != nb.rows()) {
    throw DimensionError("neighbor features " + num::shape_string(f.shape()) + " do not match " +
                         std::to_string(nb.rows()) + " neighbors");
  }
}

struct Embeddings {
  Var key;
  Var value;
  Var pos;
};

Embeddings embed(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p, bool need_key) {
  check_feats(nb, feats);
  if (feats.value().cols() != p.d_in && nb.rows() > 0) {
    throw DimensionError("feature width " + std::to_string(feats.value().cols()) + " but operator expects " +
                         std::to_string(p.d_in));
  }
  // Empty batches still carry a well-formed [0, d_in] matrix.
  if (nb.rows() == 0 && feats.value().cols() != p.d_in) feats = tape.constant(Tensor({0, p.d_in}));
  Embeddings e;
  e.pos = p.pos(tape, tape.constant(nb.rel_pos));
  e.value = p.value(tape, feats);
  if (need_key) e.key = p.key(tape, feats);
  return e;
}

Var aggregate(Tape& tape, const NeighborBatch& nb, const AttentionParams& p, Var logit_input, Var values,
              std::optional<Var> coeff) {
  Var w = num::segment_softmax(p.weight(tape, logit_input), nb.offsets);
  if (coeff) w = num::mul(w, *coeff);
  return num::segment_weighted_sum(w, values, nb.offsets);
}

Var gated_attention(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p,
                    const std::optional<GateOverride>& gates, std::optional<Var> coeff) {
  const Embeddings e = embed(tape, nb, feats, p, true);
  const Var qk = num::mul(e.pos, e.key);
  Var sq;
  Var sk;
  Var sqk;
  Var sv;
  if (gates) {
    gates->validate();
    sq = tape.constant(Tensor::scalar(gates->q));
    sk = tape.constant(Tensor::scalar(gates->k));
    sqk = tape.constant(Tensor::scalar(gates->qk));
    sv = tape.constant(Tensor::scalar(gates->v));
  } else {
    sq = num::sigmoid(p.gate_q(tape, e.pos));
    sk = num::sigmoid(p.gate_k(tape, e.key));
    sqk = num::sigmoid(p.gate_qk(tape, qk));
    sv = num::sigmoid(p.gate_v(tape, e.pos));
  }
  const Var arg = num::add(num::add(num::mul(sk, e.key), num::mul(sq, e.pos)), num::mul(sqk, qk));
  const Var values = num::add(e.value, num::mul(sv, e.pos));
  return aggregate(tape, nb, p, arg, values, coeff);
}

}  // namespace

Var pool_feature(Tape& tape, const NeighborBatch& nb, Var feats, const num::Mlp& mlp) {
  check_feats(nb, feats);
  const std::size_t d = mlp.in_dim() >= 3 ? mlp.in_dim() - 3 : 0;
  if (mlp.in_dim() < 3 || (nb.rows() > 0 && feats.value().cols() != d)) {
    throw DimensionError("pooling MLP input width must be feature width + 3");
  }
  if (nb.rows() == 0) feats = tape.constant(Tensor({0, d}));
  const Var parts[] = {feats, tape.constant(nb.rel_pos)};
  return num::segment_max(mlp(tape, num::concat_cols(parts)), nb.offsets);
}

Var pool_feature(Tape& tape, const NeighborBatch& nb, const num::Mlp& mlp) {
  return pool_feature(tape, nb, tape.constant(nb.feats), mlp);
}

Var graph_feature(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p) {
  const Embeddings e = embed(tape, nb, feats, p, false);
  return aggregate(tape, nb, p, e.pos, e.value, std::nullopt);
}

Var graph_feature(Tape& tape, const NeighborBatch& nb, const AttentionParams& p) {
  return graph_feature(tape, nb, tape.constant(nb.feats), p);
}

Var attention_feature(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p) {
  const Embeddings e = embed(tape, nb, feats, p, true);
  return aggregate(tape, nb, p, num::mul(e.pos, e.key), e.value, std::nullopt);
}

Var attention_feature(Tape& tape, const NeighborBatch& nb, const AttentionParams& p) {
  return attention_feature(tape, nb, tape.constant(nb.feats), p);
}

Var point_transformer_feature(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p) {
  const Embeddings e = embed(tape, nb, feats, p, true);
  return aggregate(tape, nb, p, num::add(e.key, e.pos), num::add(e.value, e.pos), std::nullopt);
}

Var point_transformer_feature(Tape& tape, const NeighborBatch& nb, const AttentionParams& p) {
  return point_transformer_feature(tape, nb, tape.constant(nb.feats), p);
}

Var roi_grid_attention(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p,
                       const std::optional<GateOverride>& gates) {
  return gated_attention(tape, nb, feats, p, gates, std::nullopt);
}

Var roi_grid_attention(Tape& tape, const NeighborBatch& nb, const AttentionParams& p,
                       const std::optional<GateOverride>& gates) {
  return roi_grid_attention(tape, nb, tape.constant(nb.feats), p, gates);
}

double soft_radius_coeff(double d, double r, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  // 1 - sigmoid(x) == sigmoid(-x), evaluated without cancellation.
  const double x = (r - d) / tau;
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var soft_radius_coeff(Var d, Var r, Var tau) {
  for (double t : tau.value().data()) {
    if (!(t > 0.0)) throw ParameterError("temperature must be positive");
  }
  return num::sigmoid(num::div(num::sub(r, d), tau));
}

int hard_membership(double d, double r) { return d <= r ? 1 : 0; }

Var roi_grid_attention_darp(Tape& tape, const NeighborBatch& nb, Var feats, const AttentionParams& p, Var radius,
                            double tau, const std::optional<GateOverride>& gates) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (radius.value().size() != 1) throw DimensionError("radius must be a single value");
  const double expected = extended_radius(radius.value()[0], tau);
  if (std::abs(nb.gather_radius - expected) > 1e-12 * std::max(1.0, expected)) {
    throw ContractError("neighbors gathered at radius " + std::to_string(nb.gather_radius) +
                        " but the soft-radius operator expects r + 5 tau = " + std::to_string(expected));
  }
  const Var coeff =
      soft_radius_coeff(tape.constant(nb.distances), radius, tape.constant(Tensor::scalar(tau)));
  return gated_attention(tape, nb, feats, p, gates, coeff);
}

Var roi_grid_attention_darp(Tape& tape, const NeighborBatch& nb, const AttentionParams& p, Var radius, double tau,
                            const std::optional<GateOverride>& gates) {
  return roi_grid_attention_darp(tape, nb, tape.constant(nb.feats), p, radius, tau, gates);
}

}  // namespace pyrhead
