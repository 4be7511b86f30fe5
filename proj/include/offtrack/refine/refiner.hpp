#pragma once

// Per-track inference: size from the geometry model, per-frame center and
// heading from the position model, then a track score from the confidence
// model computed on the refined boxes.

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "offtrack/ingest.hpp"
#include "offtrack/objprep.hpp"
#include "offtrack/parallel.hpp"
#include "offtrack/refine/models.hpp"
#include "offtrack/refine/train.hpp"
#include "offtrack/tracker.hpp"

namespace offtrack {

struct RefinerModels {
  PerClass<std::optional<GrmModel>> grm;
  PerClass<std::optional<PrmModel>> prm;
  PerClass<std::optional<CrmModel>> crm;

  bool empty() const {
    for (ClassId c : kAllClasses)
      if (grm[c] || prm[c] || crm[c]) return false;
    return true;
  }
};

inline std::filesystem::path model_path(const std::filesystem::path& dir, std::string_view kind,
                                        ClassId cls) {
  return dir / (std::string(kind) + "_" + std::string(class_name(cls)) + ".ckpt");
}

/// Loads whatever checkpoints exist in `dir`; missing files leave the slot empty.
inline RefinerModels load_models(const std::filesystem::path& dir) {
  RefinerModels m;
  for (ClassId c : kAllClasses) {
    if (auto p = model_path(dir, "grm", c); std::filesystem::exists(p)) m.grm[c] = load_grm(p);
    if (auto p = model_path(dir, "prm", c); std::filesystem::exists(p)) m.prm[c] = load_prm(p);
    if (auto p = model_path(dir, "crm", c); std::filesystem::exists(p)) m.crm[c] = load_crm(p);
  }
  for (ClassId c : kAllClasses) {
    if (m.grm[c]) m.grm[c]->set_training(false);
    if (m.prm[c]) m.prm[c]->set_training(false);
    if (m.crm[c]) m.crm[c]->set_training(false);
  }
  return m;
}

struct RefineOptions {
  double alpha = kDefaultRoiScale;
  GeometrySetOptions geometry{3, 64, 384, true};
  PositionSetOptions position{48, 32, 256, true};
  int crop_frames = 48;
  bool normalize_score = true;  // fused score / sqrt(2), keeps it in [0, 1]
  std::uint64_t seed = 0;
};

struct RefineOutcome {
  Track track;
  bool refined = false;
  std::string reason;  // why a track was passed through
  std::optional<ScorePair> scores;
};

inline Size3 infer_size(GrmModel& m, const ObjectSample& s, const RefineOptions& opt) {
  const GeometryPointSet set =
      build_geometry_set(s, opt.geometry, mix_seed(opt.seed, static_cast<std::uint64_t>(s.track_id)));
  const GeometryPointSet* p = &set;
  const Matrix out = m.forward(stack_geometry(std::span(&p, 1)));
  return grm_decode(out, 0, set.queries, m.anchors);
}

/// Position model over frame windows of at most crop_frames; each window
/// uses its middle entry as reference. Entries in windows without points,
/// or in slots without points, keep their box.
inline std::vector<Box3D> infer_positions(PrmModel& m, const ObjectSample& s, const RefineOptions& opt) {
  std::vector<Box3D> boxes = s.boxes;
  std::vector<PositionPointSet> sets;
  std::vector<std::size_t> offsets;
  PositionSetOptions popt = opt.position;
  popt.length_pad = opt.crop_frames;
  popt.inference = true;
  for (const auto& [first, last] : frame_windows(s.frame_indices, opt.crop_frames)) {
    const ObjectSample w = slice_sample(s, first, last);
    if (w.total_points() == 0) continue;
    sets.push_back(build_position_set(w, popt, 0));
    offsets.push_back(first);
  }
  if (sets.empty()) return boxes;
  std::vector<const PositionPointSet*> ptrs;
  for (const auto& x : sets) ptrs.push_back(&x);
  const PositionBatch batch = stack_position(ptrs);
  const Matrix out = m.forward(batch);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const PositionPointSet& set = sets[i];
    for (int slot : batch.slots[i]) {
      const auto e = static_cast<std::size_t>(set.slot_entry[slot]);
      const PositionPrediction p = prm_decode_row(out.row(row++));
      const Box3D& local = set.local_boxes[e];
      const Vec3 c = local.center() + p.center_offset;
      const Box3D refined = make_box(c.x(), c.y(), c.z(), local.l, local.w, local.h, p.yaw);
      boxes[offsets[i] + e] = box_from_frame_of(set.reference, refined);
    }
  }
  return boxes;
}

inline ScorePair infer_scores(CrmModel& m, const ObjectSample& s, const RefineOptions& opt) {
  const GeometryPointSet set =
      build_geometry_set(s, opt.geometry, mix_seed(opt.seed, static_cast<std::uint64_t>(s.track_id)));
  const GeometryPointSet* p = &set;
  const Matrix out = m.forward(stack_geometry(std::span(&p, 1)));
  return crm_decode_row(out.row(0));
}

inline RefineOutcome refine_track(const Track& track, const WorldFrames& world, RefinerModels& models,
                                  const RefineOptions& opt = {}) {
  RefineOutcome r;
  r.track = track;
  std::erase_if(r.track.entries, [](const TrackEntry& e) { return !e.updated; });
  const ClassId c = track.cls;
  if (!models.grm[c] && !models.prm[c] && !models.crm[c]) {
    r.reason = "no model for class " + std::string(class_name(c));
    return r;
  }
  if (r.track.entries.empty()) {
    r.reason = "empty track";
    return r;
  }
  ObjectSample s = extract_object_points(r.track, world, opt.alpha);
  if (s.total_points() == 0) {
    r.reason = "no points inside the track's boxes";
    return r;
  }
  try {
    if (models.grm[c]) {
      const Size3 size = infer_size(*models.grm[c], s, opt);
      for (auto& b : s.boxes) {
        b.l = size[0];
        b.w = size[1];
        b.h = size[2];
      }
    }
    if (models.prm[c]) s.boxes = infer_positions(*models.prm[c], s, opt);
    if (models.crm[c]) r.scores = infer_scores(*models.crm[c], s, opt);
  } catch (const EmptySampleError& e) {
    r.reason = e.what();
    return r;
  }
  for (std::size_t i = 0; i < s.boxes.size(); ++i) r.track.entries[i].box = s.boxes[i];
  if (r.scores) {
    double fused = fuse_score(*r.scores);
    if (opt.normalize_score) fused /= std::sqrt(2.0);
    for (auto& e : r.track.entries) e.score = fused;
  }
  r.refined = true;
  return r;
}

/// Refines every track on `jobs` threads. Each worker uses its own copy of
/// the models; results come back in input order.
inline std::vector<RefineOutcome> refine_tracks(const std::vector<Track>& tracks, const WorldFrames& world,
                                                const RefinerModels& models, const RefineOptions& opt,
                                                int jobs) {
  std::vector<RefineOutcome> out(tracks.size());
  const int workers = std::max(1, std::min<int>(resolve_jobs(jobs), static_cast<int>(tracks.size())));
  std::vector<RefinerModels> copies(static_cast<std::size_t>(workers), models);
  parallel_for(tracks.size(), workers,
               [&](int w, std::size_t i) { out[i] = refine_track(tracks[i], world, copies[w], opt); });
  return out;
}

// ---------------------------------------------------------------------------
// labels.jsonl
// ---------------------------------------------------------------------------

/// One row per (frame, track), boxes in the frame's sensor coordinates,
/// sorted by frame then track id.
inline std::vector<Json> label_rows(const std::vector<Track>& tracks, std::span<const PointCloudFrame> frames) {
  struct Row {
    std::int64_t frame, id;
    Json j;
  };
  std::vector<Row> rows;
  for (const auto& t : tracks)
    for (const auto& e : t.entries) {
      if (!e.updated) continue;
      if (e.frame_index < 0 || e.frame_index >= static_cast<std::int64_t>(frames.size()))
        throw StructureError("label references missing frame " + std::to_string(e.frame_index));
      const Box3D b = transform_box(e.box, frames[e.frame_index].pose.inverse());
      Json j;
      j["frame_index"] = e.frame_index;
      j["track_id"] = t.track_id;
      j["class"] = std::string(class_name(t.cls));
      j["box"] = box_to_json(b);
      j["score"] = e.score;
      rows.push_back({e.frame_index, t.track_id, std::move(j)});
    }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  std::vector<Json> out;
  out.reserve(rows.size());
  for (auto& r : rows) out.push_back(std::move(r.j));
  return out;
}

}  // namespace offtrack
