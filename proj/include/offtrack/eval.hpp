#pragma once

// Detection and tracking metrics: AP / APH with all-point interpolation,
// CLEAR-MOT (MOTA, MOTP, ID switches), Recall@track, and frame-level
// precision / recall tables.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "offtrack/assignment.hpp"
#include "offtrack/geom.hpp"
#include "offtrack/ingest.hpp"
#include "offtrack/tracker.hpp"

namespace offtrack {

// ---------------------------------------------------------------------------
// Frame matching
// ---------------------------------------------------------------------------

struct FrameMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt)
  std::vector<double> ious;                                // per pair
  std::vector<std::size_t> false_positives;
  std::vector<std::size_t> false_negatives;
};

/// Greedy matching in descending prediction score (ties keep input order);
/// each gt is used at most once and a match needs iou_3d > iou_thr.
inline FrameMatch match_frame(std::span<const Box3D> preds, std::span<const double> scores,
                              std::span<const Box3D> gts, double iou_thr) {
  FrameMatch out;
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<char> used(gts.size(), 0);
  for (std::size_t p : order) {
    double best = iou_thr;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = iou_3d(preds[p], gts[g]);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      used[best_g] = 1;
      out.pairs.emplace_back(p, best_g);
      out.ious.push_back(best);
    } else {
      out.false_positives.push_back(p);
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!used[g]) out.false_negatives.push_back(g);
  return out;
}

// ---------------------------------------------------------------------------
// Per-frame views of tracks
// ---------------------------------------------------------------------------

struct FrameBox {
  Box3D box;
  double score = 0;
  std::int64_t id = -1;
  int point_count = -1;  // -1: unknown
};

using FrameBoxes = std::map<std::int64_t, std::vector<FrameBox>>;

/// Emitted (updated) entries of tracks of one class, grouped by frame.
inline FrameBoxes frames_of(const std::vector<Track>& tracks, ClassId cls) {
  FrameBoxes out;
  for (const auto& t : tracks) {
    if (t.cls != cls) continue;
    for (const auto& e : t.entries)
      if (e.updated) out[e.frame_index].push_back({e.box, e.score, t.track_id, -1});
  }
  return out;
}

inline FrameBoxes frames_of(const std::vector<GtTrack>& gts, ClassId cls,
                            const std::vector<PointCloudFrame>* frames = nullptr) {
  FrameBoxes out;
  for (std::size_t k = 0; k < gts.size(); ++k) {
    if (gts[k].cls != cls) continue;
    for (const auto& e : gts[k].entries) {
      FrameBox b{e.box, 1.0, static_cast<std::int64_t>(k), -1};
      if (frames && e.frame_index >= 0 && e.frame_index < static_cast<std::int64_t>(frames->size()))
        b.point_count = count_points_in_box((*frames)[e.frame_index], e.box);
      out[e.frame_index].push_back(b);
    }
  }
  return out;
}

inline std::size_t box_count(const FrameBoxes& f) {
  std::size_t n = 0;
  for (const auto& [_, v] : f) n += v.size();
  return n;
}

// ---------------------------------------------------------------------------
// AP / APH
// ---------------------------------------------------------------------------

inline double heading_weight(double pred_yaw, double gt_yaw) {
  return std::max(0.0, 1.0 - std::abs(angle_diff(pred_yaw, gt_yaw)) / std::numbers::pi);
}

struct PrPoint {
  double recall = 0;
  double precision = 0;
  double precision_h = 0;
};

struct ApResult {
  bool has_gt = false;  // false: AP undefined (no gt boxes)
  double ap = 0;
  double aph = 0;
  std::size_t gt_count = 0;
  std::vector<PrPoint> curve;  // one point per ranked prediction
};

/// Scored detection outcome for the PR sweep.
struct RankedHit {
  double score = 0;
  bool tp = false;
  double heading = 0;  // heading weight for a TP
};

/// All-point interpolation: precision at each recall level is the maximum
/// precision at any recall >= it; AP sums it over the recall increments.
inline ApResult integrate_pr(std::vector<RankedHit> hits, std::size_t gt_count) {
  ApResult r;
  r.gt_count = gt_count;
  r.has_gt = gt_count > 0;
  if (!r.has_gt) return r;
  std::stable_sort(hits.begin(), hits.end(),
                   [](const RankedHit& a, const RankedHit& b) { return a.score > b.score; });
  double tp = 0, tph = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i].tp) {
      tp += 1;
      tph += hits[i].heading;
    }
    const double n = static_cast<double>(i + 1);
    r.curve.push_back({tp / static_cast<double>(gt_count), tp / n, tph / n});
  }
  double max_p = 0, max_ph = 0, prev_recall = 0;
  std::vector<double> env(r.curve.size()), env_h(r.curve.size());
  for (std::size_t i = r.curve.size(); i-- > 0;) {
    max_p = std::max(max_p, r.curve[i].precision);
    max_ph = std::max(max_ph, r.curve[i].precision_h);
    env[i] = max_p;
    env_h[i] = max_ph;
  }
  for (std::size_t i = 0; i < r.curve.size(); ++i) {
    const double dr = r.curve[i].recall - prev_recall;
    if (dr > 0) {
      r.ap += dr * env[i];
      r.aph += dr * env_h[i];
    }
    prev_recall = r.curve[i].recall;
  }
  return r;
}

/// Outcome of every prediction under per-frame greedy matching. With
/// `min_points` > 0, gt boxes with fewer points are excluded and predictions
/// matched to them are dropped from the sweep.
inline std::vector<RankedHit> rank_hits(const FrameBoxes& preds, const FrameBoxes& gts,
                                        double iou_thr, int min_points,
                                        std::size_t* gt_count) {
  std::vector<RankedHit> hits;
  std::size_t counted = 0;
  for (const auto& [f, gv] : gts)
    for (const auto& g : gv)
      if (min_points <= 0 || g.point_count < 0 || g.point_count >= min_points) ++counted;
  if (gt_count) *gt_count = counted;
  static const std::vector<FrameBox> kNone;
  for (const auto& [f, pv] : preds) {
    auto it = gts.find(f);
    const auto& gv = it == gts.end() ? kNone : it->second;
    std::vector<Box3D> pb, gb;
    std::vector<double> ps;
    for (const auto& p : pv) {
      pb.push_back(p.box);
      ps.push_back(p.score);
    }
    for (const auto& g : gv) gb.push_back(g.box);
    const FrameMatch m = match_frame(pb, ps, gb, iou_thr);
    for (std::size_t k = 0; k < m.pairs.size(); ++k) {
      const auto [pi, gi] = m.pairs[k];
      const FrameBox& g = gv[gi];
      if (min_points > 0 && g.point_count >= 0 && g.point_count < min_points) continue;
      hits.push_back({pv[pi].score, true, heading_weight(pv[pi].box.yaw, g.box.yaw)});
    }
    for (std::size_t pi : m.false_positives) hits.push_back({pv[pi].score, false, 0.0});
  }
  return hits;
}

inline ApResult average_precision(const FrameBoxes& preds, const FrameBoxes& gts, double iou_thr,
                                  int min_points = 0) {
  std::size_t n = 0;
  auto hits = rank_hits(preds, gts, iou_thr, min_points, &n);
  return integrate_pr(std::move(hits), n);
}

// ---------------------------------------------------------------------------
// CLEAR-MOT
// ---------------------------------------------------------------------------

struct MotResult {
  double mota = 0;
  double motp = 0;  // mean (1 - IoU) over matches
  std::size_t tp = 0, fp = 0, fn = 0, idsw = 0, gt_count = 0;
};

/// Per-frame assignment at iou_thr. A gt keeps last frame's predicted id
/// when that pair still passes the threshold; the rest are matched by the
/// Hungarian method on (1 - IoU).
inline MotResult clear_mot(const FrameBoxes& preds, const FrameBoxes& gts, double iou_thr) {
  MotResult r;
  std::map<std::int64_t, std::int64_t> last_match;  // gt id -> pred id
  double iou_sum_loss = 0;
  std::vector<std::int64_t> frames;
  for (const auto& [f, _] : preds) frames.push_back(f);
  for (const auto& [f, _] : gts) frames.push_back(f);
  std::sort(frames.begin(), frames.end());
  frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
  static const std::vector<FrameBox> kNone;

  for (std::int64_t f : frames) {
    auto pit = preds.find(f);
    auto git = gts.find(f);
    const auto& pv = pit == preds.end() ? kNone : pit->second;
    const auto& gv = git == gts.end() ? kNone : git->second;
    r.gt_count += gv.size();
    Eigen::MatrixXd iou(gv.size(), pv.size());
    for (std::size_t g = 0; g < gv.size(); ++g)
      for (std::size_t p = 0; p < pv.size(); ++p) iou(g, p) = iou_3d(gv[g].box, pv[p].box);

    std::vector<int> match(gv.size(), -1);
    std::vector<char> pred_used(pv.size(), 0);
    for (std::size_t g = 0; g < gv.size(); ++g) {
      auto it = last_match.find(gv[g].id);
      if (it == last_match.end()) continue;
      for (std::size_t p = 0; p < pv.size(); ++p)
        if (!pred_used[p] && pv[p].id == it->second && iou(g, p) > iou_thr) {
          match[g] = static_cast<int>(p);
          pred_used[p] = 1;
          break;
        }
    }
    std::vector<std::size_t> rows, cols;
    for (std::size_t g = 0; g < gv.size(); ++g)
      if (match[g] < 0) rows.push_back(g);
    for (std::size_t p = 0; p < pv.size(); ++p)
      if (!pred_used[p]) cols.push_back(p);
    if (!rows.empty() && !cols.empty()) {
      constexpr double kBlocked = 1e6;
      Eigen::MatrixXd cost(rows.size(), cols.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
          const double v = iou(rows[i], cols[j]);
          cost(i, j) = v > iou_thr ? 1.0 - v : kBlocked;
        }
      const auto a = solve_assignment(cost);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (a[i] < 0 || cost(i, a[i]) >= kBlocked) continue;
        match[rows[i]] = static_cast<int>(cols[a[i]]);
        pred_used[cols[a[i]]] = 1;
      }
    }
    for (std::size_t g = 0; g < gv.size(); ++g) {
      if (match[g] < 0) {
        ++r.fn;
        continue;
      }
      const FrameBox& p = pv[match[g]];
      ++r.tp;
      iou_sum_loss += 1.0 - iou(g, match[g]);
      auto it = last_match.find(gv[g].id);
      if (it != last_match.end() && it->second != p.id) ++r.idsw;
      last_match[gv[g].id] = p.id;
    }
    for (std::size_t p = 0; p < pv.size(); ++p)
      if (!pred_used[p]) ++r.fp;
  }
  r.mota = r.gt_count == 0
               ? 1.0 - static_cast<double>(r.fp + r.idsw)
               : 1.0 - static_cast<double>(r.fn + r.fp + r.idsw) / static_cast<double>(r.gt_count);
  r.motp = r.tp == 0 ? 0.0 : iou_sum_loss / static_cast<double>(r.tp);
  return r;
}

// ---------------------------------------------------------------------------
// Recall@track
// ---------------------------------------------------------------------------

struct RecallAtTrack {
  std::size_t matched = 0;
  std::size_t total = 0;
  double ratio() const { return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total); }
};

/// A gt track counts when at least `completeness` of its boxes match
/// (iou_3d > iou_thr) boxes of one single predicted track.
inline RecallAtTrack recall_at_track(const std::vector<Track>& tracks,
                                     const std::vector<GtTrack>& gts, double iou_thr,
                                     double completeness = 0.8,
                                     std::optional<ClassId> cls = std::nullopt) {
  RecallAtTrack r;
  for (const auto& gt : gts) {
    if (cls && gt.cls != *cls) continue;
    if (gt.entries.empty()) continue;
    ++r.total;
    std::map<std::int64_t, const Box3D*> by_frame;
    for (const auto& e : gt.entries) by_frame[e.frame_index] = &e.box;
    std::size_t best = 0;
    for (const auto& t : tracks) {
      if (t.cls != gt.cls) continue;
      std::size_t hit = 0;
      for (const auto& e : t.entries) {
        if (!e.updated) continue;
        auto it = by_frame.find(e.frame_index);
        if (it != by_frame.end() && iou_3d(e.box, *it->second) > iou_thr) ++hit;
      }
      best = std::max(best, hit);
    }
    const double need = completeness * static_cast<double>(gt.entries.size());
    if (static_cast<double>(best) >= need - 1e-9) ++r.matched;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalOptions {
  PerClass<double> iou_thr{{0.7, 0.5, 0.5}};
  std::vector<double> pr_thresholds{0.3, 0.5, 0.7};
  double completeness = 0.8;
  int easy_min_points = 5;
};

struct ThresholdRow {
  double iou_thr = 0;
  double precision = 0;
  double recall = 0;
};

struct ClassReport {
  ClassId cls = ClassId::kVehicle;
  ApResult ap;
  ApResult ap_easy;
  MotResult mot;
  RecallAtTrack recall_track;
  std::vector<ThresholdRow> table;
  double iou_thr = 0;
};

struct EvalReport {
  std::string sequence_id;
  std::vector<ClassReport> classes;  // only classes with gt or predictions
};

inline ThresholdRow frame_precision_recall(const FrameBoxes& preds, const FrameBoxes& gts,
                                           double thr) {
  std::size_t n_gt = 0;
  const auto hits = rank_hits(preds, gts, thr, 0, &n_gt);
  std::size_t tp = 0;
  for (const auto& h : hits) tp += h.tp ? 1 : 0;
  ThresholdRow row{thr, 0, 0};
  row.precision = hits.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(hits.size());
  row.recall = n_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(n_gt);
  return row;
}

/// Scores `tracks` (emitted entries as scored boxes) against the gt.
inline EvalReport evaluate(const std::vector<Track>& tracks, const std::vector<GtTrack>& gts,
                           const EvalOptions& opt = {},
                           const std::vector<PointCloudFrame>* frames = nullptr) {
  EvalReport rep;
  for (ClassId c : kAllClasses) {
    const FrameBoxes p = frames_of(tracks, c);
    const FrameBoxes g = frames_of(gts, c, frames);
    if (p.empty() && g.empty()) continue;
    ClassReport cr;
    cr.cls = c;
    cr.iou_thr = opt.iou_thr[c];
    cr.ap = average_precision(p, g, cr.iou_thr);
    cr.ap_easy = frames ? average_precision(p, g, cr.iou_thr, opt.easy_min_points) : ApResult{};
    cr.mot = clear_mot(p, g, cr.iou_thr);
    cr.recall_track = recall_at_track(tracks, gts, cr.iou_thr, opt.completeness, c);
    for (double t : opt.pr_thresholds) cr.table.push_back(frame_precision_recall(p, g, t));
    rep.classes.push_back(std::move(cr));
  }
  return rep;
}

inline Json ap_to_json(const ApResult& a) {
  Json j;
  j["has_gt"] = a.has_gt;
  if (a.has_gt) {
    j["ap"] = a.ap;
    j["aph"] = a.aph;
  } else {
    j["ap"] = nullptr;
    j["aph"] = nullptr;
  }
  j["gt_count"] = a.gt_count;
  return j;
}

inline Json report_to_json(const EvalReport& r, bool with_curves = true) {
  Json j;
  j["sequence_id"] = r.sequence_id;
  Json classes = Json::object();
  for (const auto& c : r.classes) {
    Json jc;
    jc["iou_thr"] = c.iou_thr;
    jc["detection"] = ap_to_json(c.ap);
    if (c.ap_easy.gt_count > 0) jc["detection_easy"] = ap_to_json(c.ap_easy);
    jc["mota"] = c.mot.mota;
    jc["motp"] = c.mot.motp;
    jc["recall_at_track"] = c.recall_track.ratio();
    jc["counts"] = {{"tp", c.mot.tp},   {"fp", c.mot.fp},
                    {"fn", c.mot.fn},   {"id_switches", c.mot.idsw},
                    {"gt", c.mot.gt_count}, {"gt_tracks", c.recall_track.total},
                    {"gt_tracks_recalled", c.recall_track.matched}};
    Json table = Json::array();
    for (const auto& row : c.table)
      table.push_back({{"iou_thr", row.iou_thr}, {"precision", row.precision}, {"recall", row.recall}});
    jc["precision_recall"] = std::move(table);
    if (with_curves) {
      Json curve = Json::array();
      for (const auto& p : c.ap.curve) curve.push_back({p.recall, p.precision, p.precision_h});
      jc["pr_curve"] = std::move(curve);
    }
    classes[std::string(class_name(c.cls))] = std::move(jc);
  }
  j["classes"] = std::move(classes);
  return j;
}

inline void write_report(const EvalReport& r, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out << report_to_json(r).dump(2) << '\n';
}

inline std::string format_number(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// PR curve as a small standalone SVG (recall on x, precision on y).
inline std::string pr_curve_svg(const std::vector<std::array<double, 3>>& curve,
                                const std::string& title) {
  constexpr int kW = 360, kH = 300, kPad = 40;
  auto px = [&](double r) { return format_number(kPad + r * (kW - 2 * kPad), 2); };
  auto py = [&](double p) { return format_number(kH - kPad - p * (kH - 2 * kPad), 2); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kPad << "\" y=\"20\" font-family=\"monospace\" font-size=\"12\">" << title
     << "</text>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\""
     << kH - kPad << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 8
     << "\" font-family=\"monospace\" font-size=\"11\">recall</text>\n";
  os << "<text x=\"4\" y=\"" << kH / 2 << "\" font-family=\"monospace\" font-size=\"11\">prec</text>\n";
  auto polyline = [&](int column, const char* color) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << px(0) << ','
       << py(curve.empty() ? 0 : curve.front()[column]);
    for (const auto& p : curve) os << ' ' << px(p[0]) << ',' << py(p[column]);
    os << "\"/>\n";
  };
  polyline(1, "steelblue");
  polyline(2, "darkorange");
  os << "</svg>\n";
  return os.str();
}

}  // namespace offtrack
