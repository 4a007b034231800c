#include "pyrhead/geometry.hpp"

#include <algorithm>
#include <numbers>

#include "pyrhead/errors.hpp"

namespace pyrhead {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= std::numbers::pi;
  // fmod rounding can land exactly on +pi.
  if (w >= std::numbers::pi) w -= two_pi;
  return w;
}

Box3D Box3D::from_center(Vec3 center, Vec3 extents, double yaw) {
  return {center - extents * 0.5, extents, yaw};
}

Vec3 Box3D::to_world(Vec3 p) const {
  if (yaw == 0.0) return p;
  const Vec3 c = center();
  const double cs = std::cos(yaw);
  const double sn = std::sin(yaw);
  const Vec3 d = p - c;
  return {c.x + cs * d.x - sn * d.y, c.y + sn * d.x + cs * d.y, p.z};
}

Vec3 Box3D::to_canonical(Vec3 p) const {
  if (yaw == 0.0) return p;
  const Vec3 c = center();
  const double cs = std::cos(yaw);
  const double sn = std::sin(yaw);
  const Vec3 d = p - c;
  return {c.x + cs * d.x + sn * d.y, c.y - sn * d.x + cs * d.y, p.z};
}

bool Box3D::contains(Vec3 world) const {
  const Vec3 p = to_canonical(world);
  const Vec3 hi = corner + extents;
  return p.x >= corner.x && p.x <= hi.x && p.y >= corner.y && p.y <= hi.y && p.z >= corner.z && p.z <= hi.z;
}

void Box3D::validate() const {
  if (!(extents.x > 0.0 && extents.y > 0.0 && extents.z > 0.0)) {
    throw ParameterError("box extents must be positive");
  }
  if (!(yaw >= -std::numbers::pi && yaw < std::numbers::pi)) throw ParameterError("box yaw must lie in [-pi, pi)");
}

void GridSpec::validate() const {
  if (nw == 0 || nl == 0 || nh == 0) throw ParameterError("grid sizes must be >= 1");
}

std::string to_string(AnchorMode m) { return m == AnchorMode::corner ? "corner" : "center"; }

AnchorMode anchor_mode_from_string(const std::string& s) {
  if (s == "corner") return AnchorMode::corner;
  if (s == "center") return AnchorMode::center;
  throw ParameterError("unknown anchor mode '" + s + "' (expected corner|center)");
}

void PyramidLevelConfig::validate() const {
  grid.validate();
  if (!(ratios.x >= 1.0 && ratios.y >= 1.0 && ratios.z >= 1.0)) throw ParameterError("enlarging ratios must be >= 1");
  if (max_neighbors == 0) throw ParameterError("max_neighbors must be >= 1");
  if (!(r_pre > 0.0)) throw ParameterError("predefined radius must be positive");
}

PyramidConfig PyramidConfig::standard(AnchorMode anchor) {
  const std::array<std::size_t, 5> sizes{6, 4, 4, 4, 1};
  const std::array<double, 5> ratios{1.0, 1.0, 1.5, 2.0, 4.0};
  const std::array<std::size_t, 5> caps{8, 16, 16, 16, 32};
  const std::array<double, 5> radii{0.8, 1.6, 2.4, 3.2, 6.4};
  PyramidConfig cfg;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    cfg.levels.push_back({{sizes[l], sizes[l], sizes[l]}, {ratios[l], ratios[l], 1.0}, caps[l], radii[l], anchor});
  }
  return cfg;
}

void PyramidConfig::validate() const {
  if (levels.empty()) throw ParameterError("pyramid needs at least one level");
  for (const auto& l : levels) l.validate();
  const Vec3& bottom = levels.front().ratios;
  if (bottom.x != 1.0 || bottom.y != 1.0 || bottom.z != 1.0) {
    throw ParameterError("bottom pyramid level must have ratios (1,1,1)");
  }
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i].ratios.x < levels[i - 1].ratios.x || levels[i].ratios.y < levels[i - 1].ratios.y) {
      throw ParameterError("pyramid w/l ratios must be non-decreasing with level");
    }
  }
}

namespace {

std::vector<Vec3> place_grid(const Box3D& box, const GridSpec& grid, Vec3 span, Vec3 anchor) {
  box.validate();
  grid.validate();
  const Vec3 cell{span.x / static_cast<double>(grid.nw), span.y / static_cast<double>(grid.nl),
                  span.z / static_cast<double>(grid.nh)};
  std::vector<Vec3> pts;
  pts.reserve(grid.count());
  for (std::size_t i = 0; i < grid.nw; ++i) {
    for (std::size_t j = 0; j < grid.nl; ++j) {
      for (std::size_t k = 0; k < grid.nh; ++k) {
        const Vec3 idx{0.5 + static_cast<double>(i), 0.5 + static_cast<double>(j), 0.5 + static_cast<double>(k)};
        pts.push_back(box.to_world(cmul(cell, idx) + anchor));
      }
    }
  }
  return pts;
}

}  // namespace

std::vector<Vec3> grid_points(const Box3D& box, const GridSpec& grid) {
  return place_grid(box, grid, box.extents, box.corner);
}

std::vector<Vec3> pyramid_grid_points(const Box3D& box, const PyramidLevelConfig& level) {
  level.validate();
  const Vec3 span = cmul(level.ratios, box.extents);
  // (extents - span) is exactly zero at unit ratios, so both modes reduce
  // bitwise to grid_points there.
  const Vec3 anchor = level.anchor == AnchorMode::corner ? box.corner : box.corner + (box.extents - span) * 0.5;
  return place_grid(box, level.grid, span, anchor);
}

std::size_t pyramid_point_count(const PyramidConfig& cfg) {
  std::size_t n = 0;
  for (const auto& l : cfg.levels) n += l.grid.count();
  return n;
}

double derotated_iou(const Box3D& a, const Box3D& b) {
  const Vec3 cb = b.center();
  const Vec3 d = a.center() - cb;
  const double cs = std::cos(b.yaw);
  const double sn = std::sin(b.yaw);
  const Vec3 local{cs * d.x + sn * d.y, -sn * d.x + cs * d.y, d.z};
  double inter = 1.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double lo = std::max(local[k] - 0.5 * a.extents[k], -0.5 * b.extents[k]);
    const double hi = std::min(local[k] + 0.5 * a.extents[k], 0.5 * b.extents[k]);
    inter *= std::max(0.0, hi - lo);
  }
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace pyrhead
