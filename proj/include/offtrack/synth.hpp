#pragma once

// Seeded synthetic scenarios: objects moving on simple motion models, LiDAR
// returns sampled on the box faces that face the sensor, and a corrupted
// detector output (jitter, drops, false positives).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "offtrack/config.hpp"
#include "offtrack/geom.hpp"
#include "offtrack/ingest.hpp"

namespace offtrack {

enum class MotionKind { kStatic, kConstantVelocity, kArc };

struct ObjectSpec {
  ClassId cls = ClassId::kVehicle;
  std::array<double, 3> size{4.5, 1.9, 1.6};
  MotionKind motion = MotionKind::kStatic;
  double x = 0, y = 0, yaw = 0;
  double speed = 0;          // m/s, constant velocity
  double radius = 0;         // arc radius (m)
  double angular_rate = 0;   // arc rate (rad/s), sign gives turn direction
  std::int64_t first_frame = 0;
  std::int64_t last_frame = -1;  // inclusive; -1 means the last frame
};

/// Static background structure that returns points but is not labeled.
struct ClutterSpec {
  std::array<double, 3> size{1.5, 1.5, 1.5};
  double x = 0, y = 0, yaw = 0;
};

struct SensorPath {
  double x = 0, y = 0, z = 1.8;
  double yaw = 0;
  double speed = 0;
  double yaw_rate = 0;
};

struct ScenarioConfig {
  std::string sequence_id = "synthetic";
  std::uint64_t seed = 0;
  std::int64_t frame_count = 200;
  std::int64_t frame_period_us = 100000;
  std::vector<ObjectSpec> objects;
  std::vector<ClutterSpec> clutter;
  SensorPath sensor;

  double points_per_m2_at_10m = 60.0;
  double point_noise_sigma = 0.02;
  double clutter_noise_sigma = 0.08;
  double intensity = 0.5;
  double elongation = 0.1;
  bool occlusion = false;

  double center_sigma = 0.15;    // x and y
  double center_sigma_z = 0.05;
  double size_sigma = 0.1;
  double yaw_sigma = 0.03;
  double fn_rate = 0.2;
  double fp_per_frame = 2.0;     // expected false positives per frame
  double fp_score_max = 0.25;
  double clutter_fp_rate = 0.0;  // per clutter structure and frame
  double clutter_score_scale = 0.5;
  double score_a = 1.0;
  double score_b = -3.0;
  std::array<double, 4> extent{-60, 60, -60, 60};  // xmin, xmax, ymin, ymax (world)
};

inline void validate(const ScenarioConfig& c) {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  auto sigma = [](double v, const char* name) {
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + " must be >= 0");
  };
  if (c.frame_count < 1) throw ConfigError("frame_count must be >= 1");
  rate(c.fn_rate, "fn_rate");
  rate(c.clutter_fp_rate, "clutter_fp_rate");
  sigma(c.fp_per_frame, "fp_per_frame");
  sigma(c.point_noise_sigma, "point_noise_sigma");
  sigma(c.clutter_noise_sigma, "clutter_noise_sigma");
  sigma(c.center_sigma, "center_sigma");
  sigma(c.center_sigma_z, "center_sigma_z");
  sigma(c.size_sigma, "size_sigma");
  sigma(c.yaw_sigma, "yaw_sigma");
  for (const auto& o : c.objects)
    for (double s : o.size)
      if (!(s > 0)) throw ConfigError("object sizes must be positive");
}

// ---------------------------------------------------------------------------
// Motion
// ---------------------------------------------------------------------------

inline Pose sensor_pose(const SensorPath& s, double t) {
  double yaw = s.yaw + s.yaw_rate * t;
  double x, y;
  if (std::abs(s.yaw_rate) < 1e-12) {
    x = s.x + s.speed * t * std::cos(s.yaw);
    y = s.y + s.speed * t * std::sin(s.yaw);
  } else {
    const double r = s.speed / s.yaw_rate;
    x = s.x + r * (std::sin(yaw) - std::sin(s.yaw));
    y = s.y - r * (std::cos(yaw) - std::cos(s.yaw));
  }
  return Pose::from_yaw(yaw, Vec3(x, y, s.z));
}

/// Arc circle center: to the left of the start heading for a positive
/// rate, to the right otherwise.
inline Vec3 arc_center(const ObjectSpec& o) {
  const double side = o.angular_rate >= 0 ? 1.0 : -1.0;
  return {o.x - side * o.radius * std::sin(o.yaw), o.y + side * o.radius * std::cos(o.yaw), 0.0};
}

inline Box3D object_box(const ObjectSpec& o, double t) {
  double x = o.x, y = o.y, yaw = o.yaw;
  switch (o.motion) {
    case MotionKind::kStatic:
      break;
    case MotionKind::kConstantVelocity:
      x += o.speed * t * std::cos(o.yaw);
      y += o.speed * t * std::sin(o.yaw);
      break;
    case MotionKind::kArc: {
      const Vec3 c = arc_center(o);
      const double phi0 = std::atan2(o.y - c.y(), o.x - c.x());
      const double phi = phi0 + o.angular_rate * t;
      x = c.x() + o.radius * std::cos(phi);
      y = c.y() + o.radius * std::sin(phi);
      yaw = phi + (o.angular_rate >= 0 ? 1.0 : -1.0) * std::numbers::pi / 2;
      break;
    }
  }
  return make_box(x, y, o.size[2] / 2, o.size[0], o.size[1], o.size[2], yaw);
}

inline bool object_active(const ObjectSpec& o, std::int64_t frame, std::int64_t frame_count) {
  const std::int64_t last = o.last_frame < 0 ? frame_count - 1 : o.last_frame;
  return frame >= o.first_frame && frame <= last;
}

// ---------------------------------------------------------------------------
// Surface sampling
// ---------------------------------------------------------------------------

struct Face {
  Vec3 center;
  Vec3 normal;
  Vec3 u, v;  // half-extent vectors spanning the face
  double area;
};

/// The six faces of a box in world coordinates (+x, -x, +y, -y, +z, -z).
inline std::array<Face, 6> box_faces(const Box3D& b) {
  const Pose p = box_pose(b);
  const Vec3 ex = p.rotation.col(0), ey = p.rotation.col(1), ez = p.rotation.col(2);
  const double hl = b.l / 2, hw = b.w / 2, hh = b.h / 2;
  const Vec3 c = b.center();
  return {{{c + hl * ex, ex, hw * ey, hh * ez, b.w * b.h},
           {c - hl * ex, -ex, hw * ey, hh * ez, b.w * b.h},
           {c + hw * ey, ey, hl * ex, hh * ez, b.l * b.h},
           {c - hw * ey, -ey, hl * ex, hh * ez, b.l * b.h},
           {c + hh * ez, ez, hl * ex, hw * ey, b.l * b.w},
           {c - hh * ez, -ez, hl * ex, hw * ey, b.l * b.w}}};
}

/// Whether the segment from `from` to `to` passes through `box` before
/// reaching `to` (slab test in the box frame).
inline bool segment_hits_box(const Vec3& from, const Vec3& to, const Box3D& box) {
  const Vec3 a = to_box_local(box, from), b = to_box_local(box, to);
  const Vec3 d = b - a;
  const Vec3 half(box.l / 2, box.w / 2, box.h / 2);
  double t0 = 0.0, t1 = 1.0 - 1e-6;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d(k)) < 1e-15) {
      if (std::abs(a(k)) > half(k)) return false;
      continue;
    }
    double ta = (-half(k) - a(k)) / d(k), tb = (half(k) - a(k)) / d(k);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct SurfaceSample {
  Vec3 on_face;  // before noise, world
  Vec3 noisy;    // after noise, world
};

/// Points on the faces of `box` whose outward normal points toward the
/// sensor; expected count per face = density * area * (10 / r)^2 with r the
/// sensor-to-face-center distance.
inline std::vector<SurfaceSample> sample_visible_faces(const Box3D& box, const Vec3& sensor,
                                                       double density_10m, double noise,
                                                       std::mt19937_64& rng) {
  std::vector<SurfaceSample> out;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const Face& f : box_faces(box)) {
    const Vec3 to_sensor = sensor - f.center;
    if (f.normal.dot(to_sensor) <= 0) continue;
    const double r = std::max(1.0, to_sensor.norm());
    const double mean = density_10m * f.area * (10.0 / r) * (10.0 / r);
    std::poisson_distribution<int> count(mean);
    const int k = mean > 0 ? count(rng) : 0;
    for (int i = 0; i < k; ++i) {
      const double a = u(rng), b = u(rng);
      SurfaceSample s;
      s.on_face = f.center + a * f.u + b * f.v;
      s.noisy = s.on_face;
      if (noise > 0) s.noisy += Vec3(n(rng), n(rng), n(rng)) * noise;
      out.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

inline void check_initial_overlap(const ScenarioConfig& c) {
  std::vector<Box3D> boxes;
  for (std::size_t i = 0; i < c.objects.size(); ++i) {
    if (!object_active(c.objects[i], 0, c.frame_count)) continue;
    const Box3D b = object_box(c.objects[i], 0.0);
    for (const Box3D& o : boxes)
      if (bev_intersection_area(o, b) > 0.0 && vertical_overlap(o, b) > 0.0)
        throw ConfigError("object " + std::to_string(i) + " overlaps another object at frame 0");
    boxes.push_back(b);
  }
}

/// Ground-truth boxes per object per frame (world).
inline std::vector<GtTrack> ground_truth(const ScenarioConfig& c) {
  std::vector<GtTrack> gts;
  for (std::size_t i = 0; i < c.objects.size(); ++i) {
    GtTrack t;
    t.track_id = "gt_" + std::to_string(i);
    t.cls = c.objects[i].cls;
    for (std::int64_t f = 0; f < c.frame_count; ++f) {
      if (!object_active(c.objects[i], f, c.frame_count)) continue;
      const double time = static_cast<double>(f * c.frame_period_us) * 1e-6;
      t.entries.push_back({f, object_box(c.objects[i], time)});
    }
    gts.push_back(std::move(t));
  }
  return gts;
}

inline double score_model(const ScenarioConfig& c, int point_count) {
  const double z = c.score_a * std::log(static_cast<double>(point_count) + 1.0) + c.score_b;
  return 1.0 / (1.0 + std::exp(-z));
}

inline Box3D clutter_box(const ClutterSpec& s) {
  return make_box(s.x, s.y, s.size[2] / 2, s.size[0], s.size[1], s.size[2], s.yaw);
}

/// Frames, point clouds and ground truth; detections are left empty.
inline SequenceBundle generate_scene(const ScenarioConfig& c) {
  validate(c);
  check_initial_overlap(c);
  SequenceBundle bundle;
  bundle.sequence_id = c.sequence_id;
  bundle.gt_tracks = ground_truth(c);
  std::mt19937_64 rng(c.seed);

  std::vector<Box3D> clutter;
  for (const auto& s : c.clutter) clutter.push_back(clutter_box(s));

  for (std::int64_t f = 0; f < c.frame_count; ++f) {
    const double time = static_cast<double>(f * c.frame_period_us) * 1e-6;
    PointCloudFrame frame;
    frame.frame_index = f;
    frame.timestamp_us = f * c.frame_period_us;
    frame.pose = sensor_pose(c.sensor, time);
    const Vec3 sensor = frame.pose.translation;
    const Pose inv = frame.pose.inverse();

    std::vector<Box3D> present;
    std::vector<double> noise;
    for (const auto& gt : *bundle.gt_tracks) {
      for (const auto& e : gt.entries)
        if (e.frame_index == f) {
          present.push_back(e.box);
          noise.push_back(c.point_noise_sigma);
        }
    }
    for (const Box3D& b : clutter) {
      present.push_back(b);
      noise.push_back(c.clutter_noise_sigma);
    }

    for (std::size_t i = 0; i < present.size(); ++i) {
      for (const auto& s : sample_visible_faces(present[i], sensor, c.points_per_m2_at_10m,
                                                noise[i], rng)) {
        if (c.occlusion) {
          bool blocked = false;
          for (std::size_t j = 0; j < present.size() && !blocked; ++j)
            blocked = j != i && segment_hits_box(sensor, s.noisy, present[j]);
          if (blocked) continue;
        }
        const Vec3 local = inv.apply(s.noisy);
        LidarPoint p;
        p.x = quantize_f32(local.x());
        p.y = quantize_f32(local.y());
        p.z = quantize_f32(local.z());
        p.intensity = quantize_f32(c.intensity);
        p.elongation = quantize_f32(c.elongation);
        frame.points.push_back(p);
      }
    }
    bundle.frames.push_back(std::move(frame));
  }
  bundle.detections.assign(bundle.frames.size(), {});
  return bundle;
}

namespace detail {

inline std::array<double, 3> template_size(ClassId cls) {
  switch (cls) {
    case ClassId::kVehicle:
      return {4.5, 1.9, 1.6};
    case ClassId::kPedestrian:
      return {0.7, 0.7, 1.7};
    case ClassId::kCyclist:
      return {1.7, 0.7, 1.7};
  }
  return {4.5, 1.9, 1.6};
}

}  // namespace detail

/// Detector output derived from the ground truth. Uses its own random stream
/// (seed + 1) so the scene and the corruption vary independently.
inline FrameDetections corrupt(const std::vector<GtTrack>& gt_tracks,
                               const std::vector<PointCloudFrame>& frames, const ScenarioConfig& c) {
  validate(c);
  std::mt19937_64 rng(c.seed + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  FrameDetections dets(frames.size());

  std::vector<ClassId> classes;
  for (const auto& t : gt_tracks)
    if (std::find(classes.begin(), classes.end(), t.cls) == classes.end()) classes.push_back(t.cls);
  if (classes.empty()) classes.push_back(ClassId::kVehicle);

  std::vector<Box3D> clutter;
  for (const auto& s : c.clutter) clutter.push_back(clutter_box(s));

  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& t : gt_tracks) {
      for (const auto& e : t.entries) {
        if (e.frame_index != static_cast<std::int64_t>(f)) continue;
        const double drop = unit(rng);
        const double j[7] = {n(rng), n(rng), n(rng), n(rng), n(rng), n(rng), n(rng)};
        if (drop < c.fn_rate) continue;
        Detection d;
        d.cls = t.cls;
        d.frame_index = static_cast<std::int64_t>(f);
        d.box = make_box(e.box.cx + c.center_sigma * j[0], e.box.cy + c.center_sigma * j[1],
                         e.box.cz + c.center_sigma_z * j[2],
                         std::max(0.1, e.box.l + c.size_sigma * j[3]),
                         std::max(0.1, e.box.w + c.size_sigma * j[4]),
                         std::max(0.1, e.box.h + c.size_sigma * j[5]), e.box.yaw + c.yaw_sigma * j[6]);
        d.point_count = count_points_in_box(frames[f], e.box);
        d.score = score_model(c, d.point_count);
        dets[f].push_back(d);
      }
    }
    std::poisson_distribution<int> fp_count(c.fp_per_frame > 0 ? c.fp_per_frame : 1.0);
    const int k = c.fp_per_frame > 0 ? fp_count(rng) : 0;
    for (int i = 0; i < k; ++i) {
      Detection d;
      d.cls = classes[static_cast<std::size_t>(unit(rng) * static_cast<double>(classes.size())) %
                      classes.size()];
      d.frame_index = static_cast<std::int64_t>(f);
      const auto s = detail::template_size(d.cls);
      const double x = c.extent[0] + unit(rng) * (c.extent[1] - c.extent[0]);
      const double y = c.extent[2] + unit(rng) * (c.extent[3] - c.extent[2]);
      const double yaw = (unit(rng) * 2.0 - 1.0) * std::numbers::pi;
      d.box = make_box(x, y, s[2] / 2, s[0], s[1], s[2], yaw);
      d.score = unit(rng) * c.fp_score_max;
      d.point_count = count_points_in_box(frames[f], d.box);
      dets[f].push_back(d);
    }
    for (std::size_t ci = 0; ci < clutter.size(); ++ci) {
      const double fire = unit(rng);
      const double j[4] = {n(rng), n(rng), n(rng), n(rng)};
      if (fire >= c.clutter_fp_rate) continue;
      Detection d;
      d.cls = classes.front();
      d.frame_index = static_cast<std::int64_t>(f);
      const auto s = detail::template_size(d.cls);
      const Box3D& b = clutter[ci];
      d.box = make_box(b.cx + c.center_sigma * j[0], b.cy + c.center_sigma * j[1], s[2] / 2,
                       s[0], s[1], s[2], b.yaw + c.yaw_sigma * j[3]);
      d.point_count = count_points_in_box(frames[f], d.box);
      d.score = c.clutter_score_scale * score_model(c, d.point_count);
      dets[f].push_back(d);
    }
  }
  return dets;
}

inline SequenceBundle generate(const ScenarioConfig& c) {
  SequenceBundle b = generate_scene(c);
  b.detections = corrupt(*b.gt_tracks, b.frames, c);
  return b;
}

// ---------------------------------------------------------------------------
// Procedural layouts
// ---------------------------------------------------------------------------

struct LayoutOptions {
  std::size_t objects = 20;
  std::size_t clutter = 0;
  PerClass<double> class_mix{{1.0, 0.0, 0.0}};
  double static_fraction = 0.2;
  double arc_fraction = 0.2;
  double lane_spacing = 5.0;
};

inline std::array<double, 3> random_size(ClassId cls, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (cls) {
    case ClassId::kVehicle:
      return {3.8 + 1.4 * u(rng), 1.7 + 0.4 * u(rng), 1.4 + 0.5 * u(rng)};
    case ClassId::kPedestrian:
      return {0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng), 1.5 + 0.4 * u(rng)};
    case ClassId::kCyclist:
      return {1.5 + 0.4 * u(rng), 0.5 + 0.3 * u(rng), 1.5 + 0.4 * u(rng)};
  }
  return detail::template_size(cls);
}

/// Non-crossing layout: objects move along parallel lanes (one object per
/// lane, lanes alternate sides of the sensor path), arcs use radii large
/// enough to stay inside their lane band over the sequence, and clutter sits
/// beyond the outermost lanes.
inline void add_lane_layout(ScenarioConfig& c, const LayoutOptions& opt, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double duration = static_cast<double>(c.frame_count * c.frame_period_us) * 1e-6;
  double mix_total = 0;
  for (double m : opt.class_mix.values) mix_total += m;

  for (std::size_t i = 0; i < opt.objects; ++i) {
    ObjectSpec o;
    double pick = u(rng) * mix_total;
    for (ClassId cls : kAllClasses) {
      o.cls = cls;
      if (pick < opt.class_mix[cls]) break;
      pick -= opt.class_mix[cls];
    }
    o.size = random_size(o.cls, rng);
    const double side = (i % 2 == 0) ? 1.0 : -1.0;
    const double lane = static_cast<double>(i / 2 + 1);
    o.y = c.sensor.y + side * lane * opt.lane_spacing;
    const double kind = u(rng);
    const double max_speed = o.cls == ClassId::kVehicle ? 10.0 : (o.cls == ClassId::kCyclist ? 5.0 : 1.5);
    const double speed = (0.3 + 0.7 * u(rng)) * max_speed;
    const double dir = u(rng) < 0.5 ? 1.0 : -1.0;
    o.yaw = dir > 0 ? 0.0 : std::numbers::pi;
    // Start so the object passes the sensor's mid-sequence position.
    const double sensor_mid = c.sensor.x + c.sensor.speed * duration / 2;
    o.x = sensor_mid - dir * speed * duration / 2 + (u(rng) - 0.5) * 10.0;
    if (kind < opt.static_fraction) {
      o.motion = MotionKind::kStatic;
      o.x = sensor_mid + (u(rng) - 0.5) * 40.0;
      o.yaw = (u(rng) - 0.5) * 0.4 + (dir > 0 ? 0.0 : std::numbers::pi);
    } else if (kind < opt.static_fraction + opt.arc_fraction) {
      o.motion = MotionKind::kArc;
      // Lateral drift of an arc over the sequence stays below a quarter lane.
      const double swept = speed * duration;
      o.radius = std::max(50.0, swept * swept / (2.0 * 0.25 * opt.lane_spacing));
      o.angular_rate = (u(rng) < 0.5 ? 1.0 : -1.0) * speed / o.radius;
    } else {
      o.motion = MotionKind::kConstantVelocity;
      o.speed = speed;
    }
    if (o.motion == MotionKind::kArc) o.speed = 0.0;
    c.objects.push_back(o);
  }
  const double outer = c.sensor.y + (static_cast<double>(opt.objects / 2) + 2.0) * opt.lane_spacing;
  for (std::size_t i = 0; i < opt.clutter; ++i) {
    ClutterSpec s;
    s.size = {0.8 + 1.5 * u(rng), 0.8 + 1.5 * u(rng), 0.8 + 1.2 * u(rng)};
    const double side = (i % 2 == 0) ? 1.0 : -1.0;
    s.y = side * (outer + 4.0 * u(rng));
    const double sensor_mid = c.sensor.x + c.sensor.speed * duration / 2;
    s.x = sensor_mid + (u(rng) - 0.5) * 60.0;
    s.yaw = (u(rng) - 0.5) * std::numbers::pi;
    c.clutter.push_back(s);
  }
}

/// The tracking benchmark: 200 frames, 20 vehicles on non-crossing lanes,
/// 20% drops, 2 false positives per frame, 0.15 m center jitter.
inline ScenarioConfig benchmark_scenario(std::uint64_t seed, std::size_t objects = 20) {
  ScenarioConfig c;
  c.sequence_id = "benchmark_" + std::to_string(seed);
  c.seed = seed;
  c.sensor.speed = 3.0;
  LayoutOptions opt;
  opt.objects = objects;
  add_lane_layout(c, opt, seed ^ 0x5eedULL);
  return c;
}

// ---------------------------------------------------------------------------
// scenario.toml
// ---------------------------------------------------------------------------

inline MotionKind parse_motion(const std::string& s) {
  if (s == "static") return MotionKind::kStatic;
  if (s == "constant_velocity" || s == "cv") return MotionKind::kConstantVelocity;
  if (s == "arc") return MotionKind::kArc;
  throw ConfigError("unknown motion '" + s + "'");
}

inline std::array<double, 3> get_size3(const ConfigTable& t, const std::string& key,
                                       std::array<double, 3> fallback) {
  const auto v = t.get_doubles(key, {fallback[0], fallback[1], fallback[2]});
  if (v.size() != 3) throw ConfigError("'" + key + "' needs three values");
  return {v[0], v[1], v[2]};
}

/// Reads a scenario from a parsed config. Root keys: sequence_id, seed,
/// frame_count, frame_period_us. Tables: [sensor], [points], [detection],
/// [layout] (procedural lanes), plus [[object]] and [[clutter]] arrays.
inline ScenarioConfig scenario_from_config(const Config& cfg) {
  ScenarioConfig c;
  const auto& root = cfg.table("");
  c.sequence_id = root.get_string("sequence_id", c.sequence_id);
  c.seed = static_cast<std::uint64_t>(root.get_int("seed", 0));
  c.frame_count = root.get_int("frame_count", c.frame_count);
  c.frame_period_us = root.get_int("frame_period_us", c.frame_period_us);

  const auto& s = cfg.table("sensor");
  c.sensor.x = s.get_double("x", c.sensor.x);
  c.sensor.y = s.get_double("y", c.sensor.y);
  c.sensor.z = s.get_double("z", c.sensor.z);
  c.sensor.yaw = s.get_double("yaw", c.sensor.yaw);
  c.sensor.speed = s.get_double("speed", c.sensor.speed);
  c.sensor.yaw_rate = s.get_double("yaw_rate", c.sensor.yaw_rate);

  const auto& p = cfg.table("points");
  c.points_per_m2_at_10m = p.get_double("points_per_m2_at_10m", c.points_per_m2_at_10m);
  c.point_noise_sigma = p.get_double("noise_sigma", c.point_noise_sigma);
  c.clutter_noise_sigma = p.get_double("clutter_noise_sigma", c.clutter_noise_sigma);
  c.intensity = p.get_double("intensity", c.intensity);
  c.elongation = p.get_double("elongation", c.elongation);
  c.occlusion = p.get_bool("occlusion", c.occlusion);

  const auto& d = cfg.table("detection");
  c.center_sigma = d.get_double("center_sigma", c.center_sigma);
  c.center_sigma_z = d.get_double("center_sigma_z", c.center_sigma_z);
  c.size_sigma = d.get_double("size_sigma", c.size_sigma);
  c.yaw_sigma = d.get_double("yaw_sigma", c.yaw_sigma);
  c.fn_rate = d.get_double("fn_rate", c.fn_rate);
  c.fp_per_frame = d.get_double("fp_per_frame", c.fp_per_frame);
  c.fp_score_max = d.get_double("fp_score_max", c.fp_score_max);
  c.clutter_fp_rate = d.get_double("clutter_fp_rate", c.clutter_fp_rate);
  c.clutter_score_scale = d.get_double("clutter_score_scale", c.clutter_score_scale);
  c.score_a = d.get_double("score_a", c.score_a);
  c.score_b = d.get_double("score_b", c.score_b);
  const auto ext = d.get_doubles("extent", {c.extent[0], c.extent[1], c.extent[2], c.extent[3]});
  if (ext.size() != 4) throw ConfigError("'extent' needs four values");
  c.extent = {ext[0], ext[1], ext[2], ext[3]};

  for (const auto& t : cfg.array("object")) {
    ObjectSpec o;
    o.cls = parse_class(t.get_string("class", "vehicle"));
    o.size = get_size3(t, "size", detail::template_size(o.cls));
    o.motion = parse_motion(t.get_string("motion", "static"));
    o.x = t.get_double("x", 0);
    o.y = t.get_double("y", 0);
    o.yaw = t.get_double("yaw", 0);
    o.speed = t.get_double("speed", 0);
    o.radius = t.get_double("radius", 0);
    o.angular_rate = t.get_double("angular_rate", 0);
    o.first_frame = t.get_int("first_frame", 0);
    o.last_frame = t.get_int("last_frame", -1);
    c.objects.push_back(o);
  }
  for (const auto& t : cfg.array("clutter")) {
    ClutterSpec cs;
    cs.size = get_size3(t, "size", cs.size);
    cs.x = t.get_double("x", 0);
    cs.y = t.get_double("y", 0);
    cs.yaw = t.get_double("yaw", 0);
    c.clutter.push_back(cs);
  }
  if (cfg.has_table("layout")) {
    const auto& l = cfg.table("layout");
    LayoutOptions opt;
    opt.objects = static_cast<std::size_t>(l.get_int("objects", 20));
    opt.clutter = static_cast<std::size_t>(l.get_int("clutter", 0));
    opt.static_fraction = l.get_double("static_fraction", opt.static_fraction);
    opt.arc_fraction = l.get_double("arc_fraction", opt.arc_fraction);
    opt.lane_spacing = l.get_double("lane_spacing", opt.lane_spacing);
    opt.class_mix[ClassId::kVehicle] = l.get_double("vehicle", 1.0);
    opt.class_mix[ClassId::kPedestrian] = l.get_double("pedestrian", 0.0);
    opt.class_mix[ClassId::kCyclist] = l.get_double("cyclist", 0.0);
    add_lane_layout(c, opt, static_cast<std::uint64_t>(l.get_int("seed", static_cast<std::int64_t>(c.seed))));
  }
  validate(c);
  return c;
}

}  // namespace offtrack
