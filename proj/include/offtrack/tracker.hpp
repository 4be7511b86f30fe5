#pragma once

// Offline multi-object tracker: two-stage association on predicted boxes,
// immortal track life cycle, duplicate-track merging, reverse-order pass and
// forward/reverse fusion. Matched detections replace the track state; the
// constant-velocity prediction exists only to associate.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "offtrack/assignment.hpp"
#include "offtrack/geom.hpp"
#include "offtrack/ingest.hpp"

namespace offtrack {

struct TrackEntry {
  std::int64_t frame_index = 0;
  Box3D box;  // world coordinates
  double score = 0;
  bool updated = true;  // false: predicted placeholder, never emitted
};

struct Track {
  std::int64_t track_id = 0;
  ClassId cls = ClassId::kVehicle;
  std::vector<TrackEntry> entries;
  std::int64_t birth_frame = 0;

  std::size_t updated_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                  [](const TrackEntry& e) { return e.updated; }));
  }
};

enum class Direction { kForward, kReverse };

struct TrackerState {
  std::vector<Track> active_tracks;
  std::int64_t next_id = 0;
  Direction direction = Direction::kForward;
};

/// Constant-velocity center extrapolation from the two most recently
/// processed updated entries; size and yaw stay at the last updated values.
inline Box3D predict(const Track& track, std::int64_t frame_index) {
  const TrackEntry* last = nullptr;
  const TrackEntry* prev = nullptr;
  for (auto it = track.entries.rbegin(); it != track.entries.rend(); ++it) {
    if (!it->updated) continue;
    if (last == nullptr) {
      last = &*it;
    } else {
      prev = &*it;
      break;
    }
  }
  if (last == nullptr) throw StructureError("predict needs at least one updated entry");
  Box3D out = last->box;
  if (prev == nullptr || prev->frame_index == last->frame_index) return out;
  const double gap = static_cast<double>(last->frame_index - prev->frame_index);
  const double steps = static_cast<double>(frame_index - last->frame_index);
  out.cx += (last->box.cx - prev->box.cx) / gap * steps;
  out.cy += (last->box.cy - prev->box.cy) / gap * steps;
  out.cz += (last->box.cz - prev->box.cz) / gap * steps;
  return out;
}

struct Association {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (track, det)
  std::vector<std::size_t> unmatched_tracks;
  std::vector<std::size_t> unmatched_dets;
};

/// Optimal assignment on 1 - BEV IoU; solved pairs at or below the IoU
/// threshold are discarded afterwards.
inline Association associate(std::span<const Box3D> predicted, std::span<const Box3D> dets,
                             double iou_threshold) {
  Association out;
  Eigen::MatrixXd iou(predicted.size(), dets.size());
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j) iou(i, j) = iou_bev(predicted[i], dets[j]);
  const std::vector<int> assign =
      solve_assignment(Eigen::MatrixXd::Ones(iou.rows(), iou.cols()) - iou);
  std::vector<char> det_used(dets.size(), 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int j = assign[i];
    if (j >= 0 && iou(i, j) > iou_threshold) {
      out.matches.emplace_back(i, static_cast<std::size_t>(j));
      det_used[j] = 1;
    } else {
      out.unmatched_tracks.push_back(i);
    }
  }
  for (std::size_t j = 0; j < dets.size(); ++j)
    if (!det_used[j]) out.unmatched_dets.push_back(j);
  return out;
}

namespace detail {

inline std::vector<Box3D> boxes_of(const std::vector<Detection>& dets) {
  std::vector<Box3D> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back(d.box);
  return out;
}

inline std::vector<Detection> of_class(const std::vector<Detection>& dets, ClassId c) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (d.cls == c) out.push_back(d);
  return out;
}

}  // namespace detail

/// One frame of the tracker. Class-partitioned: tracks only ever match
/// detections of their own class.
inline TrackerState step(TrackerState state, std::int64_t frame_index, const ScoreGroups& groups,
                         const ClassThresholds& thr) {
  std::vector<Track> born;
  for (ClassId c : kAllClasses) {
    std::vector<std::size_t> track_idx;
    for (std::size_t i = 0; i < state.active_tracks.size(); ++i)
      if (state.active_tracks[i].cls == c) track_idx.push_back(i);
    const auto high = detail::of_class(groups.high, c);
    const auto low = detail::of_class(groups.low, c);
    if (track_idx.empty() && high.empty()) continue;

    std::vector<Box3D> predicted;
    predicted.reserve(track_idx.size());
    for (std::size_t i : track_idx) predicted.push_back(predict(state.active_tracks[i], frame_index));

    auto replace = [&](std::size_t local, const Detection& d) {
      state.active_tracks[track_idx[local]].entries.push_back(
          {frame_index, d.box, d.score, true});
    };

    // Stage 1: all tracks against the high-score group.
    const auto high_boxes = detail::boxes_of(high);
    const Association first = associate(predicted, high_boxes, thr.stage1_iou[c]);
    for (auto [t, d] : first.matches) replace(t, high[d]);

    // Stage 2: tracks left over against the low-score group.
    std::vector<Box3D> leftover_pred;
    for (std::size_t t : first.unmatched_tracks) leftover_pred.push_back(predicted[t]);
    const Association second = associate(leftover_pred, detail::boxes_of(low), thr.stage2_iou[c]);
    std::vector<char> matched_second(first.unmatched_tracks.size(), 0);
    for (auto [t, d] : second.matches) {
      replace(first.unmatched_tracks[t], low[d]);
      matched_second[t] = 1;
    }

    // Unmatched tracks persist with a predicted placeholder.
    for (std::size_t k = 0; k < first.unmatched_tracks.size(); ++k) {
      if (matched_second[k]) continue;
      const std::size_t local = first.unmatched_tracks[k];
      state.active_tracks[track_idx[local]].entries.push_back(
          {frame_index, predicted[local], 0.0, false});
    }

    // A single unmatched high-score detection births a track; unmatched
    // low-score detections are dropped.
    for (std::size_t d : first.unmatched_dets) {
      Track t;
      t.track_id = state.next_id++;
      t.cls = c;
      t.birth_frame = frame_index;
      t.entries.push_back({frame_index, high[d].box, high[d].score, true});
      born.push_back(std::move(t));
    }
  }
  for (auto& t : born) state.active_tracks.push_back(std::move(t));
  return state;
}

namespace detail {

inline bool updated_at(const Track& t, std::int64_t frame_index) {
  return !t.entries.empty() && t.entries.back().frame_index == frame_index &&
         t.entries.back().updated;
}

/// Merges `donor` into `keeper`; on a shared frame the higher-score entry
/// wins, ties keep the keeper's entry. Entries stay in processing order.
inline void absorb(Track& keeper, const Track& donor, Direction dir) {
  std::map<std::int64_t, TrackEntry> by_frame;
  for (const auto& e : keeper.entries) by_frame[e.frame_index] = e;
  for (const auto& e : donor.entries) {
    auto it = by_frame.find(e.frame_index);
    if (it == by_frame.end()) {
      by_frame.emplace(e.frame_index, e);
    } else if (e.score > it->second.score) {
      it->second = e;
    }
  }
  keeper.entries.clear();
  for (auto& [f, e] : by_frame) keeper.entries.push_back(e);
  if (dir == Direction::kReverse) std::reverse(keeper.entries.begin(), keeper.entries.end());
}

}  // namespace detail

/// Merges same-class tracks whose current updated boxes overlap (ratio in
/// either direction above the class threshold) into the earlier-born track.
inline void merge_overlapping_tracks(TrackerState& state, std::int64_t frame_index,
                                     const ClassThresholds& thr) {
  auto& tracks = state.active_tracks;
  bool merged = true;
  while (merged) {
    merged = false;
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (detail::updated_at(tracks[i], frame_index)) live.push_back(i);
    std::sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) {
      if (tracks[a].birth_frame != tracks[b].birth_frame) {
        return state.direction == Direction::kForward
                   ? tracks[a].birth_frame < tracks[b].birth_frame
                   : tracks[a].birth_frame > tracks[b].birth_frame;
      }
      return tracks[a].track_id < tracks[b].track_id;
    });
    for (std::size_t x = 0; x < live.size() && !merged; ++x) {
      for (std::size_t y = x + 1; y < live.size() && !merged; ++y) {
        Track& keeper = tracks[live[x]];
        const Track& donor = tracks[live[y]];
        if (keeper.cls != donor.cls) continue;
        const Box3D& a = keeper.entries.back().box;
        const Box3D& b = donor.entries.back().box;
        const double thr_c = thr.merge_overlap[keeper.cls];
        if (overlap_ratio(a, b) > thr_c || overlap_ratio(b, a) > thr_c) {
          detail::absorb(keeper, donor, state.direction);
          tracks.erase(tracks.begin() + static_cast<std::ptrdiff_t>(live[y]));
          merged = true;
        }
      }
    }
  }
}

/// Drops placeholders, orders entries by frame and tracks by id.
inline std::vector<Track> finalize_tracks(std::vector<Track> tracks) {
  std::vector<Track> out;
  for (auto& t : tracks) {
    std::erase_if(t.entries, [](const TrackEntry& e) { return !e.updated; });
    if (t.entries.empty()) continue;
    std::sort(t.entries.begin(), t.entries.end(),
              [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; });
    out.push_back(std::move(t));
  }
  std::sort(out.begin(), out.end(),
            [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  return out;
}

/// Runs the tracker over already filtered per-frame detections.
inline std::vector<Track> run_tracker(const FrameDetections& filtered, const ClassThresholds& thr,
                                      Direction direction) {
  TrackerState state;
  state.direction = direction;
  const auto n = static_cast<std::int64_t>(filtered.size());
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t f = direction == Direction::kForward ? k : n - 1 - k;
    state = step(std::move(state), f, split_score_groups(filtered[f], thr), thr);
    merge_overlapping_tracks(state, f, thr);
  }
  return finalize_tracks(std::move(state.active_tracks));
}

/// Naive online tracker kept as a reference point: one association stage
/// over all detections at the stage-1 threshold, no placeholders, and a
/// track is dropped after `death_age` consecutive frames without a match.
inline std::vector<Track> run_baseline_tracker(const FrameDetections& filtered, const ClassThresholds& thr,
                                               int death_age = 3) {
  struct Live {
    Track track;
    int misses = 0;
  };
  std::vector<Live> live;
  std::vector<Track> done;
  std::int64_t next_id = 0;
  for (std::int64_t f = 0; f < static_cast<std::int64_t>(filtered.size()); ++f) {
    std::vector<Live> born;
    for (ClassId c : kAllClasses) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < live.size(); ++i)
        if (live[i].track.cls == c) idx.push_back(i);
      const auto dets = detail::of_class(filtered[f], c);
      std::vector<Box3D> predicted;
      for (std::size_t i : idx) predicted.push_back(predict(live[i].track, f));
      const Association a = associate(predicted, detail::boxes_of(dets), thr.stage1_iou[c]);
      for (auto [t, d] : a.matches) {
        live[idx[t]].track.entries.push_back({f, dets[d].box, dets[d].score, true});
        live[idx[t]].misses = 0;
      }
      for (std::size_t t : a.unmatched_tracks) ++live[idx[t]].misses;
      for (std::size_t d : a.unmatched_dets) {
        Live l;
        l.track.track_id = next_id++;
        l.track.cls = c;
        l.track.birth_frame = f;
        l.track.entries.push_back({f, dets[d].box, dets[d].score, true});
        born.push_back(std::move(l));
      }
    }
    std::vector<Live> keep;
    for (auto& l : live) {
      if (l.misses >= death_age) {
        done.push_back(std::move(l.track));
      } else {
        keep.push_back(std::move(l));
      }
    }
    live = std::move(keep);
    for (auto& b : born) live.push_back(std::move(b));
  }
  for (auto& l : live) done.push_back(std::move(l.track));
  return finalize_tracks(std::move(done));
}

/// Full pass over a bundle: overlap filter, then tracking in the given order.
inline std::vector<Track> run(const SequenceBundle& bundle, const ClassThresholds& thr,
                              Direction direction) {
  return run_tracker(overlap_filter(bundle.detections, thr), thr, direction);
}

// ---------------------------------------------------------------------------
// Forward / reverse fusion
// ---------------------------------------------------------------------------

struct WeightedBox {
  Box3D box;
  double score = 0;
};

/// Confidence-weighted fusion of two boxes of one object. The second yaw is
/// flipped by pi when the two disagree by more than pi/2.
inline WeightedBox wbf_pair(const Box3D& b1, double s1, const Box3D& b2, double s2) {
  const double total = s1 + s2;
  if (!(total > 0.0) || !std::isfinite(total))
    throw Error("wbf_pair: degenerate weights (scores sum to zero)");
  const double w1 = s1 / total, w2 = s2 / total;
  double yaw2 = b2.yaw;
  if (angle_diff(b1.yaw, yaw2) > 0.5 * kPi) yaw2 = normalize_yaw(yaw2 + kPi);
  double yaw = b1.yaw;
  if (yaw2 != b1.yaw) {
    yaw = std::atan2(w1 * std::sin(b1.yaw) + w2 * std::sin(yaw2),
                     w1 * std::cos(b1.yaw) + w2 * std::cos(yaw2));
  }
  auto mix = [&](double a, double b) { return a == b ? a : w1 * a + w2 * b; };
  Box3D out{mix(b1.cx, b2.cx), mix(b1.cy, b2.cy), mix(b1.cz, b2.cz), mix(b1.l, b2.l),
            mix(b1.w, b2.w),   mix(b1.h, b2.h),   normalize_yaw(yaw)};
  return {out, 0.5 * (s1 + s2)};
}

/// Mean BEV IoU over frames where both tracks have a box (0 if none).
inline double track_similarity(const Track& a, const Track& b) {
  std::size_t i = 0, j = 0, n = 0;
  double acc = 0.0;
  while (i < a.entries.size() && j < b.entries.size()) {
    const auto fa = a.entries[i].frame_index, fb = b.entries[j].frame_index;
    if (fa < fb) {
      ++i;
    } else if (fb < fa) {
      ++j;
    } else {
      acc += iou_bev(a.entries[i].box, b.entries[j].box);
      ++n;
      ++i;
      ++j;
    }
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

inline constexpr double kFusionSimilarityThreshold = 0.5;

inline Track fuse_pair(const Track& fwd, const Track& rev) {
  Track out;
  out.track_id = fwd.track_id;
  out.cls = fwd.cls;
  std::size_t i = 0, j = 0;
  while (i < fwd.entries.size() || j < rev.entries.size()) {
    if (j == rev.entries.size() ||
        (i < fwd.entries.size() && fwd.entries[i].frame_index < rev.entries[j].frame_index)) {
      out.entries.push_back(fwd.entries[i++]);
    } else if (i == fwd.entries.size() || rev.entries[j].frame_index < fwd.entries[i].frame_index) {
      out.entries.push_back(rev.entries[j++]);
    } else {
      const auto& a = fwd.entries[i++];
      const auto& b = rev.entries[j++];
      const WeightedBox wb = wbf_pair(a.box, a.score, b.box, b.score);
      out.entries.push_back({a.frame_index, wb.box, wb.score, true});
    }
  }
  out.birth_frame = out.entries.empty() ? 0 : out.entries.front().frame_index;
  return out;
}

/// Pairs forward and reverse tracks per class by optimal assignment on the
/// co-presence similarity and fuses each pair frame-wise. Unpaired reverse
/// tracks receive ids after the largest forward id.
inline std::vector<Track> fuse_forward_reverse(const std::vector<Track>& fwd,
                                               const std::vector<Track>& rev) {
  std::vector<Track> out;
  std::vector<char> rev_used(rev.size(), 0);
  std::int64_t max_id = -1;
  for (const auto& t : fwd) max_id = std::max(max_id, t.track_id);

  std::vector<char> fwd_done(fwd.size(), 0);
  for (ClassId c : kAllClasses) {
    std::vector<std::size_t> fi, ri;
    for (std::size_t i = 0; i < fwd.size(); ++i)
      if (fwd[i].cls == c) fi.push_back(i);
    for (std::size_t j = 0; j < rev.size(); ++j)
      if (rev[j].cls == c) ri.push_back(j);
    if (fi.empty() || ri.empty()) continue;
    Eigen::MatrixXd sim(fi.size(), ri.size());
    for (std::size_t a = 0; a < fi.size(); ++a)
      for (std::size_t b = 0; b < ri.size(); ++b) sim(a, b) = track_similarity(fwd[fi[a]], rev[ri[b]]);
    const auto assign = solve_assignment(Eigen::MatrixXd::Ones(sim.rows(), sim.cols()) - sim);
    for (std::size_t a = 0; a < fi.size(); ++a) {
      const int b = assign[a];
      if (b < 0 || !(sim(a, b) > kFusionSimilarityThreshold)) continue;
      out.push_back(fuse_pair(fwd[fi[a]], rev[ri[b]]));
      fwd_done[fi[a]] = 1;
      rev_used[ri[b]] = 1;
    }
  }
  for (std::size_t i = 0; i < fwd.size(); ++i)
    if (!fwd_done[i]) out.push_back(fwd[i]);
  std::vector<std::size_t> rest;
  for (std::size_t j = 0; j < rev.size(); ++j)
    if (!rev_used[j]) rest.push_back(j);
  std::sort(rest.begin(), rest.end(),
            [&](std::size_t a, std::size_t b) { return rev[a].track_id < rev[b].track_id; });
  for (std::size_t j : rest) {
    Track t = rev[j];
    t.track_id = ++max_id;
    out.push_back(std::move(t));
  }
  for (auto& t : out)
    if (!t.entries.empty()) t.birth_frame = t.entries.front().frame_index;
  std::sort(out.begin(), out.end(),
            [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  return out;
}

/// Forward pass, reverse pass, fusion.
inline std::vector<Track> track_sequence(const SequenceBundle& bundle, const ClassThresholds& thr) {
  const FrameDetections filtered = overlap_filter(bundle.detections, thr);
  return fuse_forward_reverse(run_tracker(filtered, thr, Direction::kForward),
                              run_tracker(filtered, thr, Direction::kReverse));
}

struct RoutedTracks {
  std::vector<Track> refinable;
  std::vector<Track> passthrough;
};

/// Tracks shorter than the class's minimum refinable length skip refinement.
inline RoutedTracks route_tracks(const std::vector<Track>& tracks, const ClassThresholds& thr) {
  RoutedTracks r;
  for (const auto& t : tracks) {
    if (static_cast<int>(t.updated_count()) < thr.min_refinable_length[t.cls]) {
      r.passthrough.push_back(t);
    } else {
      r.refinable.push_back(t);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// tracks.jsonl
// ---------------------------------------------------------------------------

inline Json track_to_json(const Track& t) {
  Json j;
  j["track_id"] = t.track_id;
  j["class"] = std::string(class_name(t.cls));
  j["birth_frame"] = t.birth_frame;
  Json entries = Json::array();
  for (const auto& e : t.entries) {
    Json je;
    je["frame_index"] = e.frame_index;
    je["box"] = box_to_json(e.box);
    je["score"] = e.score;
    je["updated"] = e.updated;
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  return j;
}

inline Track track_from_json(const Json& j) {
  Track t;
  t.track_id = j.at("track_id").get<std::int64_t>();
  t.cls = parse_class(j.at("class").get<std::string>());
  t.birth_frame = j.value("birth_frame", std::int64_t{0});
  for (const auto& je : j.at("entries")) {
    t.entries.push_back({je.at("frame_index").get<std::int64_t>(), box_from_json(je.at("box")),
                         je.at("score").get<double>(), je.value("updated", true)});
  }
  return t;
}

inline void save_tracks(const fs::path& path, const std::vector<Track>& tracks) {
  std::vector<Json> rows;
  for (const auto& t : tracks) rows.push_back(track_to_json(t));
  write_lines(path, rows);
}

inline std::vector<Track> load_tracks(const fs::path& path) {
  std::vector<Track> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(track_from_json(j)); });
  return out;
}

}  // namespace offtrack
