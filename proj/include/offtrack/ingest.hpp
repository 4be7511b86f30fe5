#pragma once

// Sequence data model, on-disk directory format, detection pre-filtering and
// high/low score grouping.
//
// Directory layout:
//   frames.jsonl               {"frame_index", "timestamp_us", "pose": [12]}
//   points/<frame_index>.f32le raw little-endian float32 rows (x,y,z,i,e)
//   detections.jsonl           {"frame_index", "class", "box": [7], "score"}
//   gt_tracks.jsonl (optional) {"track_id", "class", "entries": [...]}

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "offtrack/common.hpp"
#include "offtrack/config.hpp"
#include "offtrack/geom.hpp"

namespace offtrack {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Detection {
  Box3D box;  // world coordinates
  double score = 0;
  ClassId cls = ClassId::kVehicle;
  std::int64_t frame_index = 0;
  int point_count = 0;
};

struct GtEntry {
  std::int64_t frame_index = 0;
  Box3D box;  // world coordinates
};

struct GtTrack {
  std::string track_id;
  ClassId cls = ClassId::kVehicle;
  std::vector<GtEntry> entries;
};

struct SequenceBundle {
  std::string sequence_id;
  std::vector<PointCloudFrame> frames;
  std::vector<std::vector<Detection>> detections;  // indexed by frame_index
  std::optional<std::vector<GtTrack>> gt_tracks;
};

using FrameDetections = std::vector<std::vector<Detection>>;

struct ClassThresholds {
  PerClass<double> overlap_filter{{0.3, 0.2, 0.2}};
  PerClass<double> stage1_iou{{0.3, 0.15, 0.15}};
  PerClass<double> stage2_iou{{0.2, 0.1, 0.1}};
  PerClass<double> merge_overlap{{0.5, 0.4, 0.4}};
  PerClass<double> high_min_score{{0.1, 0.1, 0.1}};
  PerClass<int> high_min_points{{3, 1, 1}};
  PerClass<int> min_refinable_length{{7, 7, 7}};
};

inline void validate(const ClassThresholds& t) {
  for (ClassId c : kAllClasses) {
    for (double r : {t.overlap_filter[c], t.stage1_iou[c], t.stage2_iou[c], t.merge_overlap[c],
                     t.high_min_score[c]}) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("threshold ratio outside [0, 1]");
    }
    if (t.high_min_points[c] < 0) throw ConfigError("high_min_points must be >= 0");
    if (t.min_refinable_length[c] < 1) throw ConfigError("min_refinable_length must be >= 1");
  }
}

/// Reads [thresholds.<class>] tables; absent keys keep their defaults.
inline ClassThresholds thresholds_from_config(const Config& cfg) {
  ClassThresholds t;
  for (ClassId c : kAllClasses) {
    const ConfigTable& tab = cfg.table("thresholds." + std::string(class_name(c)));
    t.overlap_filter[c] = tab.get_double("overlap_filter", t.overlap_filter[c]);
    t.stage1_iou[c] = tab.get_double("stage1_iou", t.stage1_iou[c]);
    t.stage2_iou[c] = tab.get_double("stage2_iou", t.stage2_iou[c]);
    t.merge_overlap[c] = tab.get_double("merge_overlap", t.merge_overlap[c]);
    t.high_min_score[c] = tab.get_double("high_min_score", t.high_min_score[c]);
    t.high_min_points[c] =
        static_cast<int>(tab.get_int("high_min_points", t.high_min_points[c]));
    t.min_refinable_length[c] =
        static_cast<int>(tab.get_int("min_refinable_length", t.min_refinable_length[c]));
  }
  validate(t);
  return t;
}

// ---------------------------------------------------------------------------
// Point counting
// ---------------------------------------------------------------------------

/// Number of frame points inside a world-coordinate box.
inline int count_points_in_box(const PointCloudFrame& frame, const Box3D& world_box) {
  const BoxMembership inside(transform_box(world_box, frame.pose.inverse()));
  int n = 0;
  for (const auto& p : frame.points) n += inside.contains(p.x, p.y, p.z) ? 1 : 0;
  return n;
}

inline void recompute_point_counts(SequenceBundle& bundle) {
  for (auto& frame_dets : bundle.detections) {
    for (auto& d : frame_dets) {
      d.point_count = count_points_in_box(bundle.frames[d.frame_index], d.box);
    }
  }
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

inline Json box_to_json(const Box3D& b) {
  Json arr = Json::array();
  for (double v : to_array(b)) arr.push_back(v);
  return arr;
}

inline Box3D box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 7) throw GeometryError("box must be an array of 7 numbers");
  std::array<double, 7> v{};
  for (std::size_t i = 0; i < 7; ++i) v[i] = j.at(i).get<double>();
  return make_box(v);
}

inline Json pose_to_json(const Pose& p) {
  Json arr = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) arr.push_back(p.rotation(r, c));
    arr.push_back(p.translation(r));
  }
  return arr;
}

inline Pose pose_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 12) throw GeometryError("pose must be an array of 12 numbers");
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j.at(r * 4 + c).get<double>();
    p.translation(r) = j.at(r * 4 + 3).get<double>();
  }
  validate_pose(p);
  return p;
}

/// Calls fn(json, line_number) for every non-empty line; malformed JSON and
/// schema violations are reported as ParseError with the line number.
template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), line_no);
    }
    try {
      fn(j, line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), line_no);
    } catch (const GeometryError& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), line_no);
    }
  }
}

inline void write_lines(const fs::path& path, const std::vector<Json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

inline Json gt_track_to_json(const GtTrack& t) {
  Json j;
  j["track_id"] = t.track_id;
  j["class"] = std::string(class_name(t.cls));
  Json entries = Json::array();
  for (const auto& e : t.entries) {
    Json je;
    je["frame_index"] = e.frame_index;
    je["box"] = box_to_json(e.box);
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  return j;
}

inline GtTrack gt_track_from_json(const Json& j) {
  GtTrack t;
  t.track_id = j.at("track_id").get<std::string>();
  t.cls = parse_class(j.at("class").get<std::string>());
  for (const auto& je : j.at("entries")) {
    t.entries.push_back({je.at("frame_index").get<std::int64_t>(), box_from_json(je.at("box"))});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Point files
// ---------------------------------------------------------------------------

inline constexpr std::size_t kPointRecordBytes = 5 * sizeof(float);

inline std::vector<LidarPoint> read_point_file(const fs::path& path, std::int64_t frame_index) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("missing point file for frame " + std::to_string(frame_index));
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kPointRecordBytes != 0)
    throw IngestError("point file for frame " + std::to_string(frame_index) +
                      " is not a multiple of 20 bytes");
  const std::size_t n = bytes.size() / kPointRecordBytes;
  std::vector<LidarPoint> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<float, 5> rec{};
    std::memcpy(rec.data(), bytes.data() + i * kPointRecordBytes, kPointRecordBytes);
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& f : rec) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
    }
    pts[i] = {rec[0], rec[1], rec[2], rec[3], rec[4]};
  }
  return pts;
}

inline void write_point_file(const fs::path& path, const std::vector<LidarPoint>& pts) {
  std::string bytes(pts.size() * kPointRecordBytes, '\0');
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::array<float, 5> rec = {static_cast<float>(pts[i].x), static_cast<float>(pts[i].y),
                                static_cast<float>(pts[i].z),
                                static_cast<float>(pts[i].intensity),
                                static_cast<float>(pts[i].elongation)};
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& f : rec) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
    }
    std::memcpy(bytes.data() + i * kPointRecordBytes, rec.data(), kPointRecordBytes);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Load / save
// ---------------------------------------------------------------------------

inline SequenceBundle load_sequence(const fs::path& dir) {
  SequenceBundle bundle;
  bundle.sequence_id = dir.filename().string();
  if (bundle.sequence_id.empty()) bundle.sequence_id = dir.parent_path().filename().string();

  for_each_jsonl(dir / "frames.jsonl", [&](const Json& j, std::size_t) {
    PointCloudFrame f;
    f.frame_index = j.at("frame_index").get<std::int64_t>();
    f.timestamp_us = j.at("timestamp_us").get<std::int64_t>();
    f.pose = pose_from_json(j.at("pose"));
    bundle.frames.push_back(std::move(f));
  });
  std::stable_sort(bundle.frames.begin(), bundle.frames.end(),
                   [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; });
  for (std::size_t i = 0; i < bundle.frames.size(); ++i) {
    if (bundle.frames[i].frame_index != static_cast<std::int64_t>(i))
      throw StructureError("frame indices must be contiguous from 0; found " +
                           std::to_string(bundle.frames[i].frame_index) + " at position " +
                           std::to_string(i));
  }
  for (auto& f : bundle.frames) {
    f.points = read_point_file(dir / "points" / (std::to_string(f.frame_index) + ".f32le"),
                               f.frame_index);
  }

  bundle.detections.assign(bundle.frames.size(), {});
  for_each_jsonl(dir / "detections.jsonl", [&](const Json& j, std::size_t line_no) {
    Detection d;
    d.frame_index = j.at("frame_index").get<std::int64_t>();
    d.cls = parse_class(j.at("class").get<std::string>());
    d.box = box_from_json(j.at("box"));
    d.score = j.at("score").get<double>();
    if (!(d.score >= 0.0 && d.score <= 1.0))
      throw ParseError("detection score outside [0, 1]", line_no);
    if (d.frame_index < 0 || d.frame_index >= static_cast<std::int64_t>(bundle.frames.size()))
      throw StructureError("detection references missing frame " +
                           std::to_string(d.frame_index));
    bundle.detections[d.frame_index].push_back(d);
  });

  if (fs::exists(dir / "gt_tracks.jsonl")) {
    std::vector<GtTrack> gts;
    for_each_jsonl(dir / "gt_tracks.jsonl",
                   [&](const Json& j, std::size_t) { gts.push_back(gt_track_from_json(j)); });
    bundle.gt_tracks = std::move(gts);
  }
  recompute_point_counts(bundle);
  return bundle;
}

inline void save_sequence(const SequenceBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir / "points");
  std::vector<Json> frames;
  for (const auto& f : bundle.frames) {
    Json j;
    j["frame_index"] = f.frame_index;
    j["timestamp_us"] = f.timestamp_us;
    j["pose"] = pose_to_json(f.pose);
    frames.push_back(std::move(j));
    write_point_file(dir / "points" / (std::to_string(f.frame_index) + ".f32le"), f.points);
  }
  write_lines(dir / "frames.jsonl", frames);

  std::vector<Json> dets;
  for (const auto& frame_dets : bundle.detections) {
    for (const auto& d : frame_dets) {
      Json j;
      j["frame_index"] = d.frame_index;
      j["class"] = std::string(class_name(d.cls));
      j["box"] = box_to_json(d.box);
      j["score"] = d.score;
      dets.push_back(std::move(j));
    }
  }
  write_lines(dir / "detections.jsonl", dets);

  if (bundle.gt_tracks) {
    std::vector<Json> rows;
    for (const auto& t : *bundle.gt_tracks) rows.push_back(gt_track_to_json(t));
    write_lines(dir / "gt_tracks.jsonl", rows);
  }
}

// ---------------------------------------------------------------------------
// Pre-filtering
// ---------------------------------------------------------------------------

/// Order used for greedy suppression: score desc, class asc, insertion order.
inline std::vector<std::size_t> suppression_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].cls < dets[b].cls;
  });
  return order;
}

/// Greedy overlap-ratio suppression within one frame. A box is dropped when
/// some already kept box covers more than its class threshold of its BEV
/// area, regardless of the kept box's class. Output keeps suppression order.
inline std::vector<Detection> overlap_filter_frame(const std::vector<Detection>& dets,
                                                   const ClassThresholds& thr) {
  std::vector<Detection> kept;
  for (std::size_t idx : suppression_order(dets)) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return overlap_ratio(k.box, d.box) > thr.overlap_filter[d.cls];
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

inline FrameDetections overlap_filter(const FrameDetections& dets, const ClassThresholds& thr) {
  FrameDetections out;
  out.reserve(dets.size());
  for (const auto& frame : dets) out.push_back(overlap_filter_frame(frame, thr));
  return out;
}

struct ScoreGroups {
  std::vector<Detection> high;
  std::vector<Detection> low;
};

inline bool is_high_score(const Detection& d, const ClassThresholds& thr) {
  return d.score > thr.high_min_score[d.cls] && d.point_count > thr.high_min_points[d.cls];
}

/// Partitions one frame's detections; relative order is preserved.
inline ScoreGroups split_score_groups(const std::vector<Detection>& dets,
                                      const ClassThresholds& thr) {
  ScoreGroups g;
  for (const auto& d : dets) (is_high_score(d, thr) ? g.high : g.low).push_back(d);
  return g;
}

}  // namespace offtrack
