#pragma once

// Box, pose and point-cloud primitives plus the BEV/3D overlap kernels used by
// every later stage. Boxes are 7-DoF (center, extent, yaw about +Z); the
// extent (l, w, h) runs along the box-local x, y, z axes.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "offtrack/common.hpp"

namespace offtrack {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Vec3 = Eigen::Vector3d;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Wraps an angle into (-pi, pi].
inline double normalize_yaw(double a) {
  double y = std::fmod(a, kTwoPi);
  if (y <= -kPi) y += kTwoPi;
  if (y > kPi) y -= kTwoPi;
  return y;
}

/// Smallest absolute difference between two angles, in [0, pi].
inline double angle_diff(double a, double b) {
  double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

struct Box3D {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;

  Vec3 center() const { return {cx, cy, cz}; }
  double volume() const { return l * w * h; }
  double bev_area() const { return l * w; }

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

inline bool is_valid(const Box3D& b) {
  auto finite = [](double v) { return std::isfinite(v); };
  return finite(b.cx) && finite(b.cy) && finite(b.cz) && finite(b.yaw) && finite(b.l) &&
         finite(b.w) && finite(b.h) && b.l > 0 && b.w > 0 && b.h > 0;
}

/// Builds a validated box with yaw wrapped into (-pi, pi].
inline Box3D make_box(double cx, double cy, double cz, double l, double w, double h, double yaw) {
  Box3D b{cx, cy, cz, l, w, h, normalize_yaw(yaw)};
  if (!is_valid(b)) throw GeometryError("box extents must be finite and strictly positive");
  return b;
}

inline Box3D make_box(std::span<const double> v) {
  if (v.size() != 7) throw GeometryError("box needs 7 values");
  return make_box(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
}

inline std::array<double, 7> to_array(const Box3D& b) {
  return {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw};
}

/// Eight corners: bottom face counterclockwise (BEV) starting at the box-local
/// (+l/2, +w/2, -h/2), then the top face in the same order.
inline std::array<Vec3, 8> corners(const Box3D& b) {
  static constexpr std::array<std::array<double, 2>, 4> kSigns = {
      {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  std::array<Vec3, 8> out;
  for (int face = 0; face < 2; ++face) {
    const double z = (face == 0 ? -0.5 : 0.5) * b.h;
    for (int k = 0; k < 4; ++k) {
      const double x = kSigns[k][0] * 0.5 * b.l;
      const double y = kSigns[k][1] * 0.5 * b.w;
      out[face * 4 + k] = Vec3(b.cx + c * x - s * y, b.cy + s * x + c * y, b.cz + z);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convex polygon clipping in BEV
// ---------------------------------------------------------------------------

struct Point2 {
  double x = 0, y = 0;
};

// Clipping a quad by a quad yields at most 8 vertices; 16 leaves headroom for
// duplicated vertices on degenerate input.
struct ConvexPolygon {
  std::array<Point2, 16> v{};
  int n = 0;

  void push(Point2 p) {
    if (n < static_cast<int>(v.size())) v[n++] = p;
  }
};

inline ConvexPolygon bev_polygon(const Box3D& b) {
  const auto cs = corners(b);
  ConvexPolygon p;
  for (int k = 0; k < 4; ++k) p.push({cs[k].x(), cs[k].y()});
  return p;
}

/// Shoelace area (absolute value).
inline double polygon_area(const ConvexPolygon& p) {
  if (p.n < 3) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < p.n; ++i) {
    const Point2& a = p.v[i];
    const Point2& b = p.v[(i + 1) % p.n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(acc);
}

namespace detail {

inline constexpr double kOnEdgeEps = 1e-12;

inline double edge_cross(Point2 a, Point2 b, Point2 p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

inline Point2 line_intersection(Point2 p, Point2 q, Point2 a, Point2 b) {
  const double d1 = edge_cross(a, b, p);
  const double d2 = edge_cross(a, b, q);
  const double t = d1 / (d1 - d2);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace detail

/// Sutherland-Hodgman clip of `subject` against the counterclockwise convex
/// polygon `clip`. Points with |cross| < 1e-12 count as on the edge (kept).
inline ConvexPolygon clip_convex(const ConvexPolygon& subject, const ConvexPolygon& clip) {
  ConvexPolygon out = subject;
  for (int e = 0; e < clip.n && out.n > 0; ++e) {
    const Point2 a = clip.v[e];
    const Point2 b = clip.v[(e + 1) % clip.n];
    ConvexPolygon in = out;
    out.n = 0;
    Point2 prev = in.v[in.n - 1];
    bool prev_inside = detail::edge_cross(a, b, prev) >= -detail::kOnEdgeEps;
    for (int i = 0; i < in.n; ++i) {
      const Point2 cur = in.v[i];
      const bool cur_inside = detail::edge_cross(a, b, cur) >= -detail::kOnEdgeEps;
      if (cur_inside) {
        if (!prev_inside) out.push(detail::line_intersection(prev, cur, a, b));
        out.push(cur);
      } else if (prev_inside) {
        out.push(detail::line_intersection(prev, cur, a, b));
      }
      prev = cur;
      prev_inside = cur_inside;
    }
  }
  return out;
}

/// BEV intersection area; `object` is the polygon being clipped, so a fully
/// contained object reproduces its own vertex list exactly.
inline double bev_intersection_area(const Box3D& subject, const Box3D& object) {
  const double reach = 0.5 * (std::hypot(subject.l, subject.w) + std::hypot(object.l, object.w));
  if (std::abs(subject.cx - object.cx) > reach || std::abs(subject.cy - object.cy) > reach)
    return 0.0;
  return polygon_area(clip_convex(bev_polygon(object), bev_polygon(subject)));
}

inline double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = polygon_area(bev_polygon(a)) + polygon_area(bev_polygon(b)) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double vertical_overlap(const Box3D& a, const Box3D& b) {
  const double lo = std::max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h);
  const double hi = std::min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h);
  return std::max(0.0, hi - lo);
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double dz = vertical_overlap(a, b);
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  if (inter <= 0.0) return 0.0;
  const double va = polygon_area(bev_polygon(a)) * a.h;
  const double vb = polygon_area(bev_polygon(b)) * b.h;
  return std::clamp(inter / (va + vb - inter), 0.0, 1.0);
}

/// BEV intersection divided by the BEV area of `object` (asymmetric).
inline double overlap_ratio(const Box3D& subject, const Box3D& object) {
  const ConvexPolygon obj = bev_polygon(object);
  const double area = polygon_area(obj);
  if (area <= 0.0) return 0.0;
  const double reach = 0.5 * (std::hypot(subject.l, subject.w) + std::hypot(object.l, object.w));
  if (std::abs(subject.cx - object.cx) > reach || std::abs(subject.cy - object.cy) > reach)
    return 0.0;
  const double inter = polygon_area(clip_convex(obj, bev_polygon(subject)));
  return std::clamp(inter / area, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Poses and point clouds
// ---------------------------------------------------------------------------

/// Rigid transform [R | t] mapping a frame's sensor coordinates into world.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  static Pose from_yaw(double yaw, const Vec3& t) {
    Pose p;
    p.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    p.translation = t;
    return p;
  }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  Pose inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -(p.rotation * translation);
    return p;
  }

  /// (this * other)(x) = this(other(x)).
  Pose compose(const Pose& other) const {
    Pose p;
    p.rotation = rotation * other.rotation;
    p.translation = rotation * other.translation + translation;
    return p;
  }

  double yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }
};

inline void validate_pose(const Pose& p) {
  const Eigen::Matrix3d should_be_identity = p.rotation.transpose() * p.rotation;
  if ((should_be_identity - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(p.rotation.determinant() - 1.0) > 1e-6)
    throw GeometryError("pose rotation is not orthonormal with determinant +1");
  if (!p.translation.allFinite()) throw GeometryError("pose translation is not finite");
}

/// Angle by which the pose tilts +Z; gravity-aligned poses have ~0.
inline double pose_tilt(const Pose& p) {
  return std::acos(std::clamp(p.rotation(2, 2), -1.0, 1.0));
}

inline constexpr double kMaxPoseTilt = 1e-3;

inline Box3D transform_box(const Box3D& box, const Pose& pose) {
  if (pose_tilt(pose) > kMaxPoseTilt)
    throw GeometryError("pose is not gravity-aligned; roll/pitch boxes are unsupported");
  const Vec3 c = pose.apply(box.center());
  return Box3D{c.x(), c.y(), c.z(), box.l, box.w, box.h, normalize_yaw(box.yaw + pose.yaw())};
}

struct LidarPoint {
  double x = 0, y = 0, z = 0;
  double intensity = 0, elongation = 0;

  Vec3 xyz() const { return {x, y, z}; }
};

struct PointCloudFrame {
  std::int64_t frame_index = 0;
  std::int64_t timestamp_us = 0;
  std::vector<LidarPoint> points;  // sensor coordinates
  Pose pose;                       // sensor -> world
};

inline std::vector<LidarPoint> transform_points(std::span<const LidarPoint> points,
                                                const Pose& pose) {
  std::vector<LidarPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec3 q = pose.apply(p.xyz());
    out.push_back({q.x(), q.y(), q.z(), p.intensity, p.elongation});
  }
  return out;
}

inline std::vector<Vec3> transform_points(std::span<const Vec3> points, const Pose& pose) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(pose.apply(p));
  return out;
}

/// Pose whose frame is the box's local frame (box-local -> parent).
inline Pose box_pose(const Box3D& b) { return Pose::from_yaw(b.yaw, b.center()); }

inline Vec3 to_box_local(const Box3D& b, const Vec3& p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x() - b.cx, dy = p.y() - b.cy;
  return {c * dx + s * dy, -s * dx + c * dy, p.z() - b.cz};
}

inline Vec3 from_box_local(const Box3D& b, const Vec3& p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.cx + c * p.x() - s * p.y(), b.cy + s * p.x() + c * p.y(), b.cz + p.z()};
}

inline std::vector<Vec3> to_box_local(const Box3D& b, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(to_box_local(b, p));
  return out;
}

inline std::vector<Vec3> from_box_local(const Box3D& b, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(from_box_local(b, p));
  return out;
}

/// Expresses `box` in the local frame of `ref`.
inline Box3D box_in_frame_of(const Box3D& ref, const Box3D& box) {
  const Vec3 c = to_box_local(ref, box.center());
  return Box3D{c.x(), c.y(), c.z(), box.l, box.w, box.h, normalize_yaw(box.yaw - ref.yaw)};
}

/// Inverse of box_in_frame_of.
inline Box3D box_from_frame_of(const Box3D& ref, const Box3D& local) {
  const Vec3 c = from_box_local(ref, local.center());
  return Box3D{c.x(), c.y(), c.z(), local.l, local.w, local.h, normalize_yaw(local.yaw + ref.yaw)};
}

// Closed-boundary membership tolerance, absorbs rounding of rotated corners.
inline constexpr double kInsideTolerance = 1e-9;

/// Membership test for one (optionally scaled) box with the trig hoisted out;
/// used in the per-point loops of ingest and data preparation.
class BoxMembership {
 public:
  explicit BoxMembership(const Box3D& b, double scale = 1.0)
      : cx_(b.cx), cy_(b.cy), cz_(b.cz), c_(std::cos(b.yaw)), s_(std::sin(b.yaw)),
        hx_(0.5 * b.l * scale + kInsideTolerance), hy_(0.5 * b.w * scale + kInsideTolerance),
        hz_(0.5 * b.h * scale + kInsideTolerance),
        reach_(std::hypot(hx_, hy_)) {}

  bool contains(double x, double y, double z) const {
    if (std::abs(z - cz_) > hz_) return false;
    const double dx = x - cx_, dy = y - cy_;
    if (std::abs(dx) > reach_ || std::abs(dy) > reach_) return false;
    return std::abs(c_ * dx + s_ * dy) <= hx_ && std::abs(-s_ * dx + c_ * dy) <= hy_;
  }
  bool contains(const Vec3& p) const { return contains(p.x(), p.y(), p.z()); }

 private:
  double cx_, cy_, cz_, c_, s_, hx_, hy_, hz_, reach_;
};

/// True when p lies in the box with every extent multiplied by `scale`.
inline bool point_in_box(const Box3D& b, const Vec3& p, double scale = 1.0) {
  return BoxMembership(b, scale).contains(p);
}

}  // namespace offtrack
