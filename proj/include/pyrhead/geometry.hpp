#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace pyrhead {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend Vec3 operator*(double s, Vec3 a) { return a * s; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Hadamard product.
inline Vec3 cmul(Vec3 a, Vec3 b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline double distance(Vec3 a, Vec3 b) { return norm(a - b); }

/// Wraps an angle to [-pi, pi).
double wrap_angle(double a);

/// Oriented box. `corner` is the minimum corner in the box's canonical
/// (un-rotated) frame; `yaw` rotates about the vertical axis through the
/// center. Width runs along canonical x, length along y, height along z.
struct Box3D {
  Vec3 corner;
  Vec3 extents;
  double yaw = 0.0;

  static Box3D from_center(Vec3 center, Vec3 extents, double yaw);

  Vec3 center() const { return corner + extents * 0.5; }
  double volume() const { return extents.x * extents.y * extents.z; }
  double half_diagonal() const { return 0.5 * norm(extents); }

  /// Canonical-frame point -> world.
  Vec3 to_world(Vec3 canonical) const;
  /// World point -> canonical frame.
  Vec3 to_canonical(Vec3 world) const;
  /// Closed containment test in the canonical frame.
  bool contains(Vec3 world) const;

  /// Throws ParameterError unless extents are positive and yaw in [-pi, pi).
  void validate() const;
};

struct GridSpec {
  std::size_t nw = 1;
  std::size_t nl = 1;
  std::size_t nh = 1;

  std::size_t count() const { return nw * nl * nh; }
  void validate() const;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class AnchorMode { corner, center };

std::string to_string(AnchorMode m);
AnchorMode anchor_mode_from_string(const std::string& s);

struct PyramidLevelConfig {
  GridSpec grid;
  Vec3 ratios{1.0, 1.0, 1.0};
  std::size_t max_neighbors = 16;
  double r_pre = 0.8;
  AnchorMode anchor = AnchorMode::center;

  void validate() const;
};

/// Bottom level first.
struct PyramidConfig {
  std::vector<PyramidLevelConfig> levels;

  /// Five levels 6^3, 4^3, 4^3, 4^3, 1 with w/l ratios 1, 1, 1.5, 2, 4,
  /// height ratio 1, caps 8, 16, 16, 16, 32 and radii 0.8 .. 6.4 m.
  static PyramidConfig standard(AnchorMode anchor = AnchorMode::center);
  void validate() const;
};

/// Cell-centered RoI-grid: point (i,j,k) sits at
/// (W/Nw, L/Nl, H/Nh) * (0.5 + (i,j,k)) + corner, then rotated by yaw about
/// the box center. Ordered with k fastest, then j, then i.
std::vector<Vec3> grid_points(const Box3D& box, const GridSpec& grid);

/// Enlarged grid of one pyramid level. Corner anchoring keeps the literal
/// placement from the box corner; center anchoring shifts the enlarged grid so
/// it is centered on the box.
std::vector<Vec3> pyramid_grid_points(const Box3D& box, const PyramidLevelConfig& level);

std::size_t pyramid_point_count(const PyramidConfig& cfg);

/// Axis-aligned IoU after expressing `a` in the frame of `b` (yaw of `a`
/// relative to `b` is ignored).
double derotated_iou(const Box3D& a, const Box3D& b);

}  // namespace pyrhead
