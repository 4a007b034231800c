#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "pyrhead/geometry.hpp"
#include "pyrhead/tensor.hpp"

namespace pyrhead {

using PointId = std::uint32_t;

/// Points of interest: n coordinates and an [n,d] feature matrix.
struct PointSet {
  std::vector<Vec3> coords;
  num::Tensor feats{{0, 0}};

  PointSet() = default;
  PointSet(std::vector<Vec3> coords, num::Tensor feats);

  std::size_t size() const { return coords.size(); }
  std::size_t feature_dim() const { return feats.cols(); }
  bool empty() const { return coords.empty(); }
  std::span<const double> feature(PointId i) const { return feats.row(i); }

  void validate() const;
};

struct Neighbor {
  PointId id;
  double distance;
};

/// Uniform hash grid over point coordinates. Immutable after construction,
/// so concurrent queries are safe.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  SpatialIndex(std::span<const Vec3> coords, double cell);
  SpatialIndex(const PointSet& ps, double cell) : SpatialIndex(ps.coords, cell) {}

  double cell() const { return cell_; }
  std::size_t size() const { return coords_.size(); }
  std::size_t occupied_cells() const { return cells_.size(); }

  /// Closed-ball query. Returns at most `max_k` points, the nearest first,
  /// ordered by (distance, id).
  std::vector<Neighbor> ball_query(Vec3 center, double r, std::size_t max_k) const;
  /// Uncapped variant: every point with distance <= r, same ordering.
  std::vector<Neighbor> ball_query(Vec3 center, double r) const;

 private:
  struct CellRange {
    std::uint32_t begin;
    std::uint32_t end;
  };
  struct CellCoord {
    std::int64_t x, y, z;
    friend bool operator==(const CellCoord&, const CellCoord&) = default;
  };
  struct CellHash {
    std::size_t operator()(const CellCoord& c) const noexcept;
  };

  CellCoord cell_of(Vec3 p) const;
  void scan_cell(const CellRange& range, Vec3 center, double r, std::vector<Neighbor>& out) const;

  double cell_ = 1.0;
  std::vector<Vec3> coords_;                  // original order
  std::vector<PointId> sorted_ids_;           // grouped by cell, ascending id within a cell
  std::vector<Vec3> sorted_coords_;           // parallel to sorted_ids_
  std::unordered_map<CellCoord, CellRange, CellHash> cells_;
  std::vector<std::pair<CellCoord, CellRange>> cell_list_;
};

inline SpatialIndex build_index(const PointSet& ps, double cell) { return SpatialIndex(ps, cell); }

/// Query radius used by the soft-radius operator: r + 5 tau.
double extended_radius(double r, double tau);

std::vector<Neighbor> extended_query(const SpatialIndex& idx, Vec3 center, double r, double tau,
                                     std::size_t max_k);

}  // namespace pyrhead
