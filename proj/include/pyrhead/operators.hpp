#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pyrhead/nn.hpp"
#include "pyrhead/spatial.hpp"

namespace pyrhead {

/// Neighborhood of a single grid point.
struct NeighborBundle {
  Vec3 grid_point;
  std::vector<PointId> ids;
  std::vector<Vec3> offsets;  // p_i - p_grid
  num::Tensor feats{{0, 0}};  // [m,d]
};

/// Neighborhoods of G grid points stacked row-wise. Within each segment rows
/// are in ascending point-id order, which fixes the summation order of every
/// operator independent of how neighbors were discovered.
struct NeighborBatch {
  std::vector<Vec3> grid_points;
  std::vector<std::size_t> offsets{0};  // G+1 entries
  std::vector<PointId> ids;
  num::Tensor rel_pos{{0, 3}};    // [M,3]
  num::Tensor distances{{0, 1}};  // [M,1]
  num::Tensor feats{{0, 0}};      // [M,d]
  /// Radius the neighbors were gathered with (0 when assembled by hand).
  double gather_radius = 0.0;

  std::size_t groups() const { return offsets.size() - 1; }
  std::size_t rows() const { return ids.size(); }
  std::size_t segment_size(std::size_t g) const { return offsets[g + 1] - offsets[g]; }

  static NeighborBatch from_bundles(std::span<const NeighborBundle> bundles, std::size_t feature_dim);
};

/// Ball-queries every grid point (capped at max_k nearest) and stacks the
/// results into a batch, rows of a grid point in ascending id order.
NeighborBatch gather_neighbors(const PointSet& ps, const SpatialIndex& idx, std::span<const Vec3> grid,
                               double radius, std::size_t max_k);

/// Learnable maps of the unified operator. Keys and values are linear in
/// the point feature, the positional embedding is linear in the offset, the
/// weight head maps d_model to one logit per head, and each gate is a
/// linear-to-scalar map followed by a sigmoid.
struct AttentionParams {
  std::size_t d_in = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  num::LinearLayer key;
  num::LinearLayer value;
  num::LinearLayer pos;
  num::LinearLayer weight;
  num::LinearLayer gate_q;
  num::LinearLayer gate_k;
  num::LinearLayer gate_qk;
  num::LinearLayer gate_v;

  static AttentionParams create(num::ParameterSet& params, const std::string& name, std::size_t d_in,
                                std::size_t d_model, std::size_t heads, num::Rng& rng);
  std::size_t head_width() const { return d_model / heads; }
};

/// Fixed gate values replacing the learned gates.
struct GateOverride {
  double q = 0.0;
  double k = 0.0;
  double qk = 0.0;
  double v = 0.0;
  void validate() const;
};

inline constexpr GateOverride kGraphGates{1.0, 0.0, 0.0, 0.0};
inline constexpr GateOverride kAttentionGates{0.0, 0.0, 1.0, 0.0};
inline constexpr GateOverride kTransformerGates{1.0, 1.0, 0.0, 1.0};

// All operators return [G, width]; segments with no neighbors yield zero rows.
// `feats` must be the [M,d] neighbor feature matrix (pass a tape variable to
// differentiate with respect to it); the overloads without it use nb.feats.

/// Channel-wise max of MLP([f_i, p_i - p_grid]).
num::Var pool_feature(num::Tape& tape, const NeighborBatch& nb, num::Var feats, const num::Mlp& mlp);
num::Var pool_feature(num::Tape& tape, const NeighborBatch& nb, const num::Mlp& mlp);

/// sum_i W(Q_pos^i) (.) V^i
num::Var graph_feature(num::Tape& tape, const NeighborBatch& nb, num::Var feats, const AttentionParams& p);
num::Var graph_feature(num::Tape& tape, const NeighborBatch& nb, const AttentionParams& p);

/// sum_i W(Q_pos^i * K^i) (.) V^i
num::Var attention_feature(num::Tape& tape, const NeighborBatch& nb, num::Var feats, const AttentionParams& p);
num::Var attention_feature(num::Tape& tape, const NeighborBatch& nb, const AttentionParams& p);

/// sum_i W(K^i + Q_pos^i) (.) (V^i + Q_pos^i)
num::Var point_transformer_feature(num::Tape& tape, const NeighborBatch& nb, num::Var feats,
                                   const AttentionParams& p);
num::Var point_transformer_feature(num::Tape& tape, const NeighborBatch& nb, const AttentionParams& p);

/// Gated unified operator:
/// sum_i W(s_k K + s_q Q_pos + s_qk Q_pos*K) (.) (V + s_v Q_pos).
num::Var roi_grid_attention(num::Tape& tape, const NeighborBatch& nb, num::Var feats, const AttentionParams& p,
                            const std::optional<GateOverride>& gates = std::nullopt);
num::Var roi_grid_attention(num::Tape& tape, const NeighborBatch& nb, const AttentionParams& p,
                            const std::optional<GateOverride>& gates = std::nullopt);

/// 1 - sigmoid((d - r) / tau). Throws ParameterError for tau <= 0.
double soft_radius_coeff(double d, double r, double tau);
/// Differentiable in d, r and tau; scalar operands broadcast.
num::Var soft_radius_coeff(num::Var d, num::Var r, num::Var tau);

/// 1 iff d <= r.
int hard_membership(double d, double r);

/// Unified operator over the extended range r + 5 tau with every softmax-
/// weighted summand scaled by soft_radius_coeff(|dp_i|, r, tau). The batch
/// must have been gathered at exactly r + 5 tau (ContractError otherwise);
/// the output depends on r only through the coefficients.
num::Var roi_grid_attention_darp(num::Tape& tape, const NeighborBatch& nb, num::Var feats, const AttentionParams& p,
                                 num::Var radius, double tau,
                                 const std::optional<GateOverride>& gates = std::nullopt);
num::Var roi_grid_attention_darp(num::Tape& tape, const NeighborBatch& nb, const AttentionParams& p,
                                 num::Var radius, double tau,
                                 const std::optional<GateOverride>& gates = std::nullopt);

}  // namespace pyrhead
