#pragma once

// Object-centric data preparation: crop each tracked object's points from the
// enlarged track boxes, then build the point sets consumed by the refiners.
//
// Geometry set rows (box-local to the point's own frame box):
//   value  = [x, y, z, intensity, d_sf1..d_sf6]            (10)
//   query  = value + [score]                               (11)
// Position set rows (in the reference box's frame):
//   value  = [x, y, z, intensity, d_ce(3), d_co1..d_co8(24)] (31)
//   query  = value + [score]                                 (32)

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "offtrack/geom.hpp"
#include "offtrack/ingest.hpp"
#include "offtrack/tracker.hpp"

namespace offtrack {

inline constexpr double kDefaultRoiScale = 1.1;

struct ObjectSample {
  std::int64_t track_id = 0;
  ClassId cls = ClassId::kVehicle;
  std::vector<std::int64_t> frame_indices;
  std::vector<std::vector<LidarPoint>> per_frame_points;  // world coordinates
  std::vector<Box3D> boxes;
  std::vector<double> scores;

  std::size_t size() const { return boxes.size(); }
  std::size_t total_points() const {
    std::size_t n = 0;
    for (const auto& p : per_frame_points) n += p.size();
    return n;
  }
};

/// Every frame's points mapped into world coordinates, computed once per
/// sequence and shared read-only across tracks.
struct WorldFrames {
  std::vector<std::vector<LidarPoint>> points;
};

inline WorldFrames to_world_frames(std::span<const PointCloudFrame> frames) {
  WorldFrames w;
  w.points.reserve(frames.size());
  for (const auto& f : frames) w.points.push_back(transform_points(f.points, f.pose));
  return w;
}

/// Collects, for each track entry, the world points inside the entry's box
/// with every extent multiplied by `alpha` (closed boundary).
inline ObjectSample extract_object_points(const Track& track, const WorldFrames& world,
                                          double alpha) {
  ObjectSample s;
  s.track_id = track.track_id;
  s.cls = track.cls;
  for (const auto& e : track.entries) {
    if (e.frame_index < 0 || e.frame_index >= static_cast<std::int64_t>(world.points.size()))
      throw StructureError("track entry references missing frame " +
                           std::to_string(e.frame_index));
    const BoxMembership inside(e.box, alpha);
    std::vector<LidarPoint> pts;
    for (const auto& p : world.points[e.frame_index])
      if (inside.contains(p.x, p.y, p.z)) pts.push_back(p);
    s.frame_indices.push_back(e.frame_index);
    s.per_frame_points.push_back(std::move(pts));
    s.boxes.push_back(e.box);
    s.scores.push_back(e.score);
  }
  return s;
}

inline ObjectSample extract_object_points(const Track& track,
                                          std::span<const PointCloudFrame> frames, double alpha) {
  WorldFrames world;
  world.points.resize(frames.size());
  for (const auto& e : track.entries) {
    if (e.frame_index < 0 || e.frame_index >= static_cast<std::int64_t>(frames.size()))
      throw StructureError("track entry references missing frame " +
                           std::to_string(e.frame_index));
    if (world.points[e.frame_index].empty()) {
      const auto& f = frames[e.frame_index];
      world.points[e.frame_index] = transform_points(f.points, f.pose);
    }
  }
  return extract_object_points(track, world, alpha);
}

// ---------------------------------------------------------------------------
// Proposal-to-point encodings
// ---------------------------------------------------------------------------

/// Signed distances to the six box planes in the box frame, negative inside:
/// (x - l/2, -x - l/2, y - w/2, -y - w/2, z - h/2, -z - h/2).
inline std::array<double, 6> p2s_encode_local(const Vec3& q, const Box3D& box) {
  const double hl = 0.5 * box.l, hw = 0.5 * box.w, hh = 0.5 * box.h;
  return {q.x() - hl, -q.x() - hl, q.y() - hw, -q.y() - hw, q.z() - hh, -q.z() - hh};
}

inline std::array<double, 6> p2s_encode(const Vec3& point, const Box3D& box) {
  return p2s_encode_local(to_box_local(box, point), box);
}

/// Center offset followed by the offsets to the eight corners, corners in
/// the order produced by corners().
inline std::array<double, 27> p2co_encode(const Vec3& point, const Box3D& box) {
  std::array<double, 27> out{};
  const Vec3 dc = point - box.center();
  for (int k = 0; k < 3; ++k) out[k] = dc(k);
  const auto cs = corners(box);
  for (int c = 0; c < 8; ++c) {
    const Vec3 d = point - cs[c];
    for (int k = 0; k < 3; ++k) out[3 + 3 * c + k] = d(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometry point set
// ---------------------------------------------------------------------------

inline constexpr int kGeometryValueWidth = 10;
inline constexpr int kGeometryQueryWidth = 11;
inline constexpr int kPositionValueWidth = 31;
inline constexpr int kPositionQueryWidth = 32;

struct GeometrySetOptions {
  int queries = 3;             // t
  int points_per_query = 256;  // points per query frame
  int value_points = 4096;     // n
  bool inference = false;      // highest-score query frames instead of random
};

struct GeometryPointSet {
  int queries = 0;
  int points_per_query = 0;
  int value_points = 0;
  RowMatrix query_rows;      // (t * points_per_query) x 11
  RowMatrix value_rows;      // n x 10
  RowMatrix proposal_sizes;  // t x 3
  std::vector<std::size_t> query_entries;
};

namespace detail {

struct LocalPoint {
  Vec3 xyz;
  double intensity;
  std::size_t entry;
};

inline std::vector<std::size_t> nonempty_entries(const ObjectSample& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!s.per_frame_points[i].empty()) out.push_back(i);
  return out;
}

/// Picks `t` entries: highest score first at inference (cycling when the
/// track has fewer non-empty frames), uniform with replacement in training.
inline std::vector<std::size_t> pick_query_entries(const ObjectSample& s,
                                                   const std::vector<std::size_t>& nonempty, int t,
                                                   bool inference, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (inference) {
    std::vector<std::size_t> order = nonempty;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
    for (int k = 0; k < t; ++k) out.push_back(order[k % order.size()]);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, nonempty.size() - 1);
    for (int k = 0; k < t; ++k) out.push_back(nonempty[pick(rng)]);
  }
  return out;
}

}  // namespace detail

inline GeometryPointSet build_geometry_set(const ObjectSample& sample,
                                           const GeometrySetOptions& opt, std::uint64_t seed) {
  const auto nonempty = detail::nonempty_entries(sample);
  if (nonempty.empty())
    throw EmptySampleError("track " + std::to_string(sample.track_id) + " has no points");
  std::mt19937_64 rng(seed);

  // Points of every frame in their own frame's box coordinates, pooled.
  std::vector<std::vector<detail::LocalPoint>> local(sample.size());
  std::vector<std::pair<std::size_t, std::size_t>> pooled;
  for (std::size_t i : nonempty) {
    for (const auto& p : sample.per_frame_points[i]) {
      local[i].push_back({to_box_local(sample.boxes[i], p.xyz()), p.intensity, i});
      pooled.emplace_back(i, local[i].size() - 1);
    }
  }

  auto fill = [&](auto row, const detail::LocalPoint& lp) {
    row(0) = lp.xyz.x();
    row(1) = lp.xyz.y();
    row(2) = lp.xyz.z();
    row(3) = lp.intensity;
    const auto d = p2s_encode_local(lp.xyz, sample.boxes[lp.entry]);
    for (int k = 0; k < 6; ++k) row(4 + k) = d[k];
  };

  GeometryPointSet g;
  g.queries = opt.queries;
  g.points_per_query = opt.points_per_query;
  g.value_points = opt.value_points;

  g.value_rows.resize(opt.value_points, kGeometryValueWidth);
  std::uniform_int_distribution<std::size_t> pick_pooled(0, pooled.size() - 1);
  for (int r = 0; r < opt.value_points; ++r) {
    const auto [e, k] = pooled[pick_pooled(rng)];
    fill(g.value_rows.row(r), local[e][k]);
  }

  g.query_entries = detail::pick_query_entries(sample, nonempty, opt.queries, opt.inference, rng);
  g.query_rows.resize(static_cast<Eigen::Index>(opt.queries) * opt.points_per_query,
                      kGeometryQueryWidth);
  g.proposal_sizes.resize(opt.queries, 3);
  for (int q = 0; q < opt.queries; ++q) {
    const std::size_t e = g.query_entries[q];
    const auto& pts = local[e];
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    for (int r = 0; r < opt.points_per_query; ++r) {
      auto row = g.query_rows.row(static_cast<Eigen::Index>(q) * opt.points_per_query + r);
      fill(row, pts[pick(rng)]);
      row(10) = sample.scores[e];
    }
    g.proposal_sizes.row(q) << sample.boxes[e].l, sample.boxes[e].w, sample.boxes[e].h;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Position point set
// ---------------------------------------------------------------------------

struct PositionSetOptions {
  int length_pad = 200;
  int points_per_frame = 256;
  int value_points = 2048;  // n_pos
  bool inference = false;   // middle entry as reference instead of random
};

struct PositionPointSet {
  int length_pad = 0;
  int points_per_frame = 0;
  RowMatrix rows;                        // (length_pad * points_per_frame) x 32
  std::vector<char> valid;               // per slot
  std::vector<std::int64_t> slot_entry;  // entry index per slot, -1 for none
  std::vector<Box3D> local_boxes;        // per entry, in the reference frame
  RowMatrix value_rows;                  // n_pos x 31
  Box3D reference;
  std::size_t reference_entry = 0;
  std::int64_t first_frame = 0;

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
  }
};

/// Expresses the whole track in one entry's box frame. Slots are indexed by
/// frame offset from the first entry; slots without an entry or without
/// points stay all-zero and invalid. Tracks spanning more frames than
/// length_pad grow the padding to fit.
inline PositionPointSet build_position_set(const ObjectSample& sample,
                                           const PositionSetOptions& opt, std::uint64_t seed) {
  const auto nonempty = detail::nonempty_entries(sample);
  if (nonempty.empty())
    throw EmptySampleError("track " + std::to_string(sample.track_id) + " has no points");
  std::mt19937_64 rng(seed);

  PositionPointSet ps;
  ps.first_frame = sample.frame_indices.front();
  const std::int64_t span = sample.frame_indices.back() - ps.first_frame + 1;
  ps.length_pad = std::max<int>(opt.length_pad, static_cast<int>(span));
  ps.points_per_frame = opt.points_per_frame;
  if (opt.inference) {
    ps.reference_entry = sample.size() / 2;
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, sample.size() - 1);
    ps.reference_entry = pick(rng);
  }
  ps.reference = sample.boxes[ps.reference_entry];

  ps.local_boxes.reserve(sample.size());
  for (const auto& b : sample.boxes) ps.local_boxes.push_back(box_in_frame_of(ps.reference, b));

  ps.rows = RowMatrix::Zero(static_cast<Eigen::Index>(ps.length_pad) * opt.points_per_frame,
                            kPositionQueryWidth);
  ps.valid.assign(ps.length_pad, 0);
  ps.slot_entry.assign(ps.length_pad, -1);

  auto fill = [&](auto row, const LidarPoint& p, std::size_t entry) {
    const Vec3 q = to_box_local(ps.reference, p.xyz());
    row(0) = q.x();
    row(1) = q.y();
    row(2) = q.z();
    row(3) = p.intensity;
    const auto enc = p2co_encode(q, ps.local_boxes[entry]);
    for (int k = 0; k < 27; ++k) row(4 + k) = enc[k];
  };

  std::vector<std::pair<std::size_t, std::size_t>> pooled;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto slot = static_cast<std::size_t>(sample.frame_indices[i] - ps.first_frame);
    ps.slot_entry[slot] = static_cast<std::int64_t>(i);
    const auto& pts = sample.per_frame_points[i];
    if (pts.empty()) continue;
    ps.valid[slot] = 1;
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    for (int r = 0; r < opt.points_per_frame; ++r) {
      auto row = ps.rows.row(static_cast<Eigen::Index>(slot) * opt.points_per_frame + r);
      fill(row, pts[pick(rng)], i);
      row(31) = sample.scores[i];
    }
    for (std::size_t k = 0; k < pts.size(); ++k) pooled.emplace_back(i, k);
  }

  ps.value_rows.resize(opt.value_points, kPositionValueWidth);
  std::uniform_int_distribution<std::size_t> pick_pooled(0, pooled.size() - 1);
  for (int r = 0; r < opt.value_points; ++r) {
    const auto [e, k] = pooled[pick_pooled(rng)];
    fill(ps.value_rows.row(r), sample.per_frame_points[e][k], e);
  }
  return ps;
}

}  // namespace offtrack
