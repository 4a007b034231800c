#include "pyrhead/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pyrhead/errors.hpp"

namespace pyrhead {

PointSet::PointSet(std::vector<Vec3> c, num::Tensor f) : coords(std::move(c)), feats(std::move(f)) { validate(); }

void PointSet::validate() const {
  if (feats.rank() != 2) throw DimensionError("point features must be an [n,d] matrix");
  if (feats.rows() != coords.size()) {
    throw DimensionError("point set has " + std::to_string(coords.size()) + " coordinates but " +
                         std::to_string(feats.rows()) + " feature rows");
  }
  for (const Vec3& p : coords) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw NumericError("point set contains non-finite coordinates");
    }
  }
}

std::size_t SpatialIndex::CellHash::operator()(const CellCoord& c) const noexcept {
  // Teschner et al. spatial hash primes.
  const auto h = static_cast<std::uint64_t>(c.x) * 73856093ULL ^ static_cast<std::uint64_t>(c.y) * 19349663ULL ^
                 static_cast<std::uint64_t>(c.z) * 83492791ULL;
  return static_cast<std::size_t>(h);
}

SpatialIndex::CellCoord SpatialIndex::cell_of(Vec3 p) const {
  return {static_cast<std::int64_t>(std::floor(p.x / cell_)), static_cast<std::int64_t>(std::floor(p.y / cell_)),
          static_cast<std::int64_t>(std::floor(p.z / cell_))};
}

SpatialIndex::SpatialIndex(std::span<const Vec3> coords, double cell)
    : cell_(cell), coords_(coords.begin(), coords.end()) {
  if (!(cell > 0.0)) throw ParameterError("spatial index cell size must be positive");
  if (coords.size() > std::numeric_limits<std::uint32_t>::max()) throw ParameterError("too many points to index");
  std::vector<CellCoord> keys(coords_.size());
  for (std::size_t i = 0; i < coords_.size(); ++i) keys[i] = cell_of(coords_[i]);
  std::vector<PointId> order(coords_.size());
  std::iota(order.begin(), order.end(), PointId{0});
  std::sort(order.begin(), order.end(), [&](PointId a, PointId b) {
    const CellCoord& ka = keys[a];
    const CellCoord& kb = keys[b];
    if (ka.x != kb.x) return ka.x < kb.x;
    if (ka.y != kb.y) return ka.y < kb.y;
    if (ka.z != kb.z) return ka.z < kb.z;
    return a < b;
  });
  sorted_ids_ = order;
  sorted_coords_.reserve(order.size());
  for (PointId id : order) sorted_coords_.push_back(coords_[id]);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && keys[order[j]] == keys[order[i]]) ++j;
    const CellRange range{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
    cells_.emplace(keys[order[i]], range);
    cell_list_.emplace_back(keys[order[i]], range);
    i = j;
  }
}

void SpatialIndex::scan_cell(const CellRange& range, Vec3 center, double r, std::vector<Neighbor>& out) const {
  for (std::uint32_t k = range.begin; k < range.end; ++k) {
    const double d = distance(sorted_coords_[k], center);
    if (d <= r) out.push_back({sorted_ids_[k], d});
  }
}

std::vector<Neighbor> SpatialIndex::ball_query(Vec3 center, double r) const {
  if (!(r > 0.0)) throw ParameterError("ball query radius must be positive");
  std::vector<Neighbor> out;
  if (coords_.empty()) return out;
  // Pad the cell range so rounding in center +- r never drops a boundary cell;
  // membership itself is decided by the exact distance test.
  const double pad = r * (1.0 + 1e-9) + 1e-12;
  const CellCoord lo = cell_of({center.x - pad, center.y - pad, center.z - pad});
  const CellCoord hi = cell_of({center.x + pad, center.y + pad, center.z + pad});
  const double span = static_cast<double>(hi.x - lo.x + 1) * static_cast<double>(hi.y - lo.y + 1) *
                      static_cast<double>(hi.z - lo.z + 1);
  if (span > static_cast<double>(cell_list_.size())) {
    // Large radius relative to occupancy: walk the occupied cells instead.
    for (const auto& [c, range] : cell_list_) {
      if (c.x < lo.x || c.x > hi.x || c.y < lo.y || c.y > hi.y || c.z < lo.z || c.z > hi.z) continue;
      scan_cell(range, center, r, out);
    }
  } else {
    for (std::int64_t x = lo.x; x <= hi.x; ++x)
      for (std::int64_t y = lo.y; y <= hi.y; ++y)
        for (std::int64_t z = lo.z; z <= hi.z; ++z) {
          auto it = cells_.find({x, y, z});
          if (it != cells_.end()) scan_cell(it->second, center, r, out);
        }
  }
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  return out;
}

std::vector<Neighbor> SpatialIndex::ball_query(Vec3 center, double r, std::size_t max_k) const {
  if (max_k == 0) throw ParameterError("ball query max_k must be >= 1");
  std::vector<Neighbor> out = ball_query(center, r);
  if (out.size() > max_k) out.resize(max_k);
  return out;
}

double extended_radius(double r, double tau) { return r + 5.0 * tau; }

std::vector<Neighbor> extended_query(const SpatialIndex& idx, Vec3 center, double r, double tau,
                                     std::size_t max_k) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  return idx.ball_query(center, extended_radius(r, tau), max_k);
}

}  // namespace pyrhead
