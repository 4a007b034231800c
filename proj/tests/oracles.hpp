#pragma once

// Straight-loop reference implementations used as test oracles. They read
// parameters directly from the ParameterSet and share no code with the
// tape-based operators.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "pyrhead/darp.hpp"
#include "pyrhead/geometry.hpp"
#include "pyrhead/nn.hpp"
#include "pyrhead/operators.hpp"
#include "pyrhead/spatial.hpp"

namespace oracle {

using Row = std::vector<double>;
using Mat = std::vector<Row>;

inline Row linear(const Row& x, const pyrhead::num::ParameterSet& ps, const pyrhead::num::LinearLayer& l) {
  const auto& w = ps[l.weight].value;
  const auto& b = ps[l.bias].value;
  Row y(l.out);
  for (std::size_t o = 0; o < l.out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < l.in; ++i) acc += x[i] * w[i * l.out + o];
    if (l.activation == pyrhead::num::Activation::relu && acc < 0.0) acc = 0.0;
    y[o] = acc;
  }
  return y;
}

inline Row mlp(Row x, const pyrhead::num::ParameterSet& ps, const pyrhead::num::Mlp& m) {
  for (const auto& l : m.layers()) x = linear(x, ps, l);
  return x;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Row add(const Row& a, const Row& b) {
  Row c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

inline Row hadamard(const Row& a, const Row& b) {
  Row c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
  return c;
}

inline Row row_of(const pyrhead::num::Tensor& t, std::size_t r) {
  const auto s = t.row(r);
  return Row(s.begin(), s.end());
}

// Per grid point: softmax over neighbors of W(logit_in) per head, then the
// head-blocked weighted sum of `values`, each weight scaled by coeff[i].
inline Mat weighted_combination(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps,
                                const pyrhead::AttentionParams& p, const Mat& logit_in, const Mat& values,
                                const Row* coeff = nullptr) {
  const std::size_t H = p.heads;
  const std::size_t dh = p.d_model / H;
  Mat out(nb.groups(), Row(p.d_model, 0.0));
  for (std::size_t g = 0; g < nb.groups(); ++g) {
    const std::size_t b = nb.offsets[g];
    const std::size_t e = nb.offsets[g + 1];
    if (b == e) continue;
    Mat logits;
    for (std::size_t i = b; i < e; ++i) logits.push_back(linear(logit_in[i], ps, p.weight));
    for (std::size_t h = 0; h < H; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < e - b; ++i) mx = std::max(mx, logits[i][h]);
      double z = 0.0;
      for (std::size_t i = 0; i < e - b; ++i) z += std::exp(logits[i][h] - mx);
      for (std::size_t i = 0; i < e - b; ++i) {
        double w = std::exp(logits[i][h] - mx) / z;
        if (coeff) w *= (*coeff)[b + i];
        for (std::size_t c = 0; c < dh; ++c) out[g][h * dh + c] += w * values[b + i][h * dh + c];
      }
    }
  }
  return out;
}

struct Embedded {
  Mat key, value, pos;
};

inline Embedded embed(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps,
                      const pyrhead::AttentionParams& p) {
  Embedded e;
  for (std::size_t i = 0; i < nb.rows(); ++i) {
    const Row f = row_of(nb.feats, i);
    e.key.push_back(linear(f, ps, p.key));
    e.value.push_back(linear(f, ps, p.value));
    e.pos.push_back(linear(row_of(nb.rel_pos, i), ps, p.pos));
  }
  return e;
}

// sum_i W(Q_pos) * V
inline Mat graph(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps,
                 const pyrhead::AttentionParams& p) {
  const Embedded e = embed(nb, ps, p);
  return weighted_combination(nb, ps, p, e.pos, e.value);
}

// sum_i W(Q_pos K) * V
inline Mat attention(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps,
                     const pyrhead::AttentionParams& p) {
  const Embedded e = embed(nb, ps, p);
  Mat qk;
  for (std::size_t i = 0; i < nb.rows(); ++i) qk.push_back(hadamard(e.pos[i], e.key[i]));
  return weighted_combination(nb, ps, p, qk, e.value);
}

// sum_i W(K + Q_pos) * (V + Q_pos)
inline Mat transformer(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps,
                       const pyrhead::AttentionParams& p) {
  const Embedded e = embed(nb, ps, p);
  Mat arg, val;
  for (std::size_t i = 0; i < nb.rows(); ++i) {
    arg.push_back(add(e.key[i], e.pos[i]));
    val.push_back(add(e.value[i], e.pos[i]));
  }
  return weighted_combination(nb, ps, p, arg, val);
}

// learned gates, optional soft-radius coefficient
inline Mat gated(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps,
                 const pyrhead::AttentionParams& p, const Row* coeff = nullptr) {
  const Embedded e = embed(nb, ps, p);
  Mat arg, val;
  for (std::size_t i = 0; i < nb.rows(); ++i) {
    const Row qk = hadamard(e.pos[i], e.key[i]);
    const double sq = sigmoid(linear(e.pos[i], ps, p.gate_q)[0]);
    const double sk = sigmoid(linear(e.key[i], ps, p.gate_k)[0]);
    const double sqk = sigmoid(linear(qk, ps, p.gate_qk)[0]);
    const double sv = sigmoid(linear(e.pos[i], ps, p.gate_v)[0]);
    Row a(p.d_model), v(p.d_model);
    for (std::size_t c = 0; c < p.d_model; ++c) {
      a[c] = sk * e.key[i][c] + sq * e.pos[i][c] + sqk * qk[c];
      v[c] = e.value[i][c] + sv * e.pos[i][c];
    }
    arg.push_back(a);
    val.push_back(v);
  }
  return weighted_combination(nb, ps, p, arg, val, coeff);
}

// maxpool_i MLP([f_i, p_i - p_grid]); zeros for empty neighborhoods
inline Mat pool(const pyrhead::NeighborBatch& nb, const pyrhead::num::ParameterSet& ps, const pyrhead::num::Mlp& m) {
  Mat out(nb.groups(), Row(m.out_dim(), 0.0));
  for (std::size_t g = 0; g < nb.groups(); ++g) {
    bool first = true;
    for (std::size_t i = nb.offsets[g]; i < nb.offsets[g + 1]; ++i) {
      Row x = row_of(nb.feats, i);
      for (std::size_t k = 0; k < 3; ++k) x.push_back(nb.rel_pos.at(i, k));
      const Row y = mlp(x, ps, m);
      for (std::size_t c = 0; c < y.size(); ++c) out[g][c] = first ? y[c] : std::max(out[g][c], y[c]);
      first = false;
    }
  }
  return out;
}

inline double soft_coeff(double d, double r, double tau) { return 1.0 - sigmoid((d - r) / tau); }

// (rho W / N, rho L / N, rho H / N) * (0.5 + ijk) + anchor, then yaw about the box center
inline std::vector<pyrhead::Vec3> grid(const pyrhead::Box3D& box, std::size_t nw, std::size_t nl, std::size_t nh,
                                       pyrhead::Vec3 rho, bool centered) {
  std::vector<pyrhead::Vec3> pts;
  const double W = rho.x * box.extents.x, L = rho.y * box.extents.y, H = rho.z * box.extents.z;
  double ax = box.corner.x, ay = box.corner.y, az = box.corner.z;
  if (centered) {
    ax -= 0.5 * (W - box.extents.x);
    ay -= 0.5 * (L - box.extents.y);
    az -= 0.5 * (H - box.extents.z);
  }
  const double cx = box.corner.x + 0.5 * box.extents.x;
  const double cy = box.corner.y + 0.5 * box.extents.y;
  for (std::size_t i = 0; i < nw; ++i) {
    for (std::size_t j = 0; j < nl; ++j) {
      for (std::size_t k = 0; k < nh; ++k) {
        const double x = W / static_cast<double>(nw) * (0.5 + static_cast<double>(i)) + ax;
        const double y = L / static_cast<double>(nl) * (0.5 + static_cast<double>(j)) + ay;
        const double z = H / static_cast<double>(nh) * (0.5 + static_cast<double>(k)) + az;
        const double dx = x - cx, dy = y - cy;
        pts.push_back({cx + std::cos(box.yaw) * dx - std::sin(box.yaw) * dy,
                       cy + std::sin(box.yaw) * dx + std::cos(box.yaw) * dy, z});
      }
    }
  }
  return pts;
}

// every point with distance <= r, nearest first (ties by id), at most max_k
inline std::vector<pyrhead::Neighbor> ball(const std::vector<pyrhead::Vec3>& pts, pyrhead::Vec3 c, double r,
                                          std::size_t max_k = std::numeric_limits<std::size_t>::max()) {
  std::vector<pyrhead::Neighbor> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dx = pts[i].x - c.x, dy = pts[i].y - c.y, dz = pts[i].z - c.z;
    const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
    if (d <= r) out.push_back({static_cast<pyrhead::PointId>(i), d});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  });
  if (out.size() > max_k) out.resize(max_k);
  return out;
}

// context: per-sphere column max of MLP([f_i, p_i - c]) over points within
// each radius of the RoI center, inner sphere first
inline Row context(const pyrhead::Box3D& roi, const pyrhead::PointSet& pset, const pyrhead::num::ParameterSet& ps,
                   const pyrhead::ContextAggregatorParams& cp) {
  const std::size_t w = cp.mlp.out_dim();
  Row out(2 * w, 0.0);
  const pyrhead::Vec3 c = roi.center();
  for (std::size_t s = 0; s < 2; ++s) {
    bool first = true;
    for (std::size_t i = 0; i < pset.size(); ++i) {
      const pyrhead::Vec3 d = pset.coords[i] - c;
      if (std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z) > cp.radii[s]) continue;
      Row x = row_of(pset.feats, i);
      x.push_back(d.x);
      x.push_back(d.y);
      x.push_back(d.z);
      const Row y = mlp(x, ps, cp.mlp);
      for (std::size_t k = 0; k < w; ++k) out[s * w + k] = first ? y[k] : std::max(out[s * w + k], y[k]);
      first = false;
    }
  }
  return out;
}

inline double max_rel_error(const pyrhead::num::Tensor& got, const Mat& want, double floor = 1e-9) {
  double worst = 0.0;
  for (std::size_t r = 0; r < want.size(); ++r) {
    for (std::size_t c = 0; c < want[r].size(); ++c) {
      const double a = got.at(r, c), b = want[r][c];
      worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}));
    }
  }
  return worst;
}

}  // namespace oracle
