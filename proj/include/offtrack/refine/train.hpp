#pragma once

// Training corpora and loops for the three refiners.
//
// A corpus is built from tracker output: every track is paired with the
// ground-truth track that its entries overlap most often, and each entry
// keeps that gt track's box at the same frame (frames without one are left
// unsupervised).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "offtrack/ingest.hpp"
#include "offtrack/nn/optim.hpp"
#include "offtrack/objprep.hpp"
#include "offtrack/refine/anchors.hpp"
#include "offtrack/refine/models.hpp"
#include "offtrack/tracker.hpp"

namespace offtrack {

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct CorpusTrack {
  Track track;
  ObjectSample sample;
  int gt_index = -1;                        // into the bundle's gt tracks
  std::vector<std::optional<Box3D>> gt;     // per entry
  double mean_best_iou = 0.0;               // over entries, best iou_3d to any same-class gt
};

struct CorpusOptions {
  double alpha = kDefaultRoiScale;
  double match_iou = 0.3;  // entry-to-gt iou_3d needed to vote for a gt track
};

/// Pairs tracks with gt. Tracks whose sample has no points are kept (they
/// still carry CRM labels) but are skipped by the GRM / PRM loops.
inline std::vector<CorpusTrack> build_corpus(const SequenceBundle& bundle,
                                             const std::vector<Track>& tracks,
                                             const WorldFrames& world,
                                             const CorpusOptions& opt = {}) {
  std::vector<CorpusTrack> out;
  static const std::vector<GtTrack> kNoGt;
  const auto& gts = bundle.gt_tracks ? *bundle.gt_tracks : kNoGt;
  // gt box per (gt index, frame)
  std::vector<std::map<std::int64_t, Box3D>> gt_at(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g)
    for (const auto& e : gts[g].entries) gt_at[g][e.frame_index] = e.box;

  for (const auto& t : tracks) {
    CorpusTrack c;
    c.track = t;
    std::erase_if(c.track.entries, [](const TrackEntry& e) { return !e.updated; });
    if (c.track.entries.empty()) continue;
    c.sample = extract_object_points(c.track, world, opt.alpha);

    std::map<int, int> votes;
    double iou_sum = 0;
    for (const auto& e : c.track.entries) {
      double best = 0;
      int best_g = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].cls != t.cls) continue;
        auto it = gt_at[g].find(e.frame_index);
        if (it == gt_at[g].end()) continue;
        const double iou = iou_3d(e.box, it->second);
        if (iou > best) {
          best = iou;
          best_g = static_cast<int>(g);
        }
      }
      iou_sum += best;
      if (best_g >= 0 && best > opt.match_iou) ++votes[best_g];
    }
    c.mean_best_iou = iou_sum / static_cast<double>(c.track.entries.size());
    int top = 0;
    for (const auto& [g, n] : votes)
      if (n > top) {
        top = n;
        c.gt_index = g;
      }
    c.gt.resize(c.track.entries.size());
    if (c.gt_index >= 0) {
      for (std::size_t i = 0; i < c.track.entries.size(); ++i) {
        auto it = gt_at[c.gt_index].find(c.track.entries[i].frame_index);
        if (it != gt_at[c.gt_index].end() && iou_bev(c.track.entries[i].box, it->second) > 0.0)
          c.gt[i] = it->second;
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Size3> corpus_gt_sizes(std::span<const CorpusTrack> corpus, ClassId cls) {
  std::vector<Size3> sizes;
  for (const auto& c : corpus) {
    if (c.track.cls != cls) continue;
    for (const auto& g : c.gt)
      if (g) sizes.push_back({g->l, g->w, g->h});
  }
  return sizes;
}

// ---------------------------------------------------------------------------
// CRM labels
// ---------------------------------------------------------------------------

struct CrmLabelRule {
  PerClass<double> tau_high{{0.7, 0.5, 0.5}};
  PerClass<double> tau_low{{0.35, 0.25, 0.25}};
};

/// Track-level label from the mean best-match IoU: above tau_h positive,
/// below tau_l negative, otherwise ignored (-1).
inline int crm_label(double mean_best_iou, ClassId cls, const CrmLabelRule& rule = {}) {
  if (mean_best_iou > rule.tau_high[cls]) return 1;
  if (mean_best_iou < rule.tau_low[cls]) return 0;
  return -1;
}

/// IoU target: mean iou_3d between refined boxes and the matched gt over
/// entries (entries without gt contribute 0).
inline double crm_iou_target(const CorpusTrack& c, std::span<const Box3D> refined) {
  if (refined.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < refined.size() && i < c.gt.size(); ++i)
    if (c.gt[i]) s += iou_3d(refined[i], *c.gt[i]);
  return s / static_cast<double>(refined.size());
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// World-level similarity applied to a whole object sample and its gt:
/// optional mirror across the x = 0 and / or y = 0 planes, rotation about
/// z, then uniform scaling about the origin.
struct SampleTransform {
  bool flip_x = false;  // x -> -x
  bool flip_y = false;  // y -> -y
  double rotation = 0.0;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const {
    double x = flip_x ? -p.x() : p.x();
    double y = flip_y ? -p.y() : p.y();
    const double c = std::cos(rotation), s = std::sin(rotation);
    return Vec3(c * x - s * y, s * x + c * y, p.z()) * scale;
  }

  Box3D apply(const Box3D& b) const {
    double yaw = b.yaw;
    if (flip_x) yaw = std::numbers::pi - yaw;
    if (flip_y) yaw = -yaw;
    const Vec3 c = apply(b.center());
    return make_box(c.x(), c.y(), c.z(), b.l * scale, b.w * scale, b.h * scale, yaw + rotation);
  }

  bool identity() const { return !flip_x && !flip_y && rotation == 0.0 && scale == 1.0; }
};

inline SampleTransform random_transform(std::mt19937_64& rng, bool rotate = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SampleTransform t;
  t.flip_x = u(rng) < 0.5;
  t.flip_y = u(rng) < 0.5;
  const double r = u(rng);
  t.rotation = rotate ? (r - 0.5) * std::numbers::pi : 0.0;
  t.scale = 0.9 + 0.2 * u(rng);
  return t;
}

inline ObjectSample transform_sample(const ObjectSample& s, const SampleTransform& t) {
  if (t.identity()) return s;
  ObjectSample o = s;
  for (auto& frame : o.per_frame_points)
    for (auto& p : frame) {
      const Vec3 q = t.apply(p.xyz());
      p.x = q.x();
      p.y = q.y();
      p.z = q.z();
    }
  for (auto& b : o.boxes) b = t.apply(b);
  return o;
}

inline std::vector<std::optional<Box3D>> transform_gt(const std::vector<std::optional<Box3D>>& gt,
                                                      const SampleTransform& t) {
  std::vector<std::optional<Box3D>> o = gt;
  for (auto& b : o)
    if (b) b = t.apply(*b);
  return o;
}

/// Same sample with different boxes (points untouched).
inline ObjectSample with_boxes(ObjectSample s, std::span<const Box3D> boxes) {
  for (std::size_t i = 0; i < s.boxes.size() && i < boxes.size(); ++i) s.boxes[i] = boxes[i];
  return s;
}

/// Entries [first, last) as their own sample.
inline ObjectSample slice_sample(const ObjectSample& s, std::size_t first, std::size_t last) {
  ObjectSample o;
  o.track_id = s.track_id;
  o.cls = s.cls;
  for (std::size_t i = first; i < last; ++i) {
    o.frame_indices.push_back(s.frame_indices[i]);
    o.per_frame_points.push_back(s.per_frame_points[i]);
    o.boxes.push_back(s.boxes[i]);
    o.scores.push_back(s.scores[i]);
  }
  return o;
}

/// Consecutive entry ranges whose frame span stays within `max_frames`.
inline std::vector<std::pair<std::size_t, std::size_t>> frame_windows(
    std::span<const std::int64_t> frames, int max_frames) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t first = 0;
  while (first < frames.size()) {
    std::size_t last = first + 1;
    while (last < frames.size() && frames[last] - frames[first] < max_frames) ++last;
    out.emplace_back(first, last);
    first = last;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop plumbing
// ---------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 12;
  int batch = 16;
  double lr = 2e-3;
  double clip = 10.0;
  std::uint64_t seed = 0;
  bool augment = true;
  ModelWidths widths{};
  GeometrySetOptions geometry{3, 64, 384, false};
  PositionSetOptions position{48, 32, 256, false};
  int crop_frames = 48;      // PRM training window (frames)
  double frame_drop = 0.1;   // PRM random frame deprecation
  std::size_t anchors = 3;
  int window = kDefaultLocalityWindow;
  std::function<void(int, double)> on_epoch;  // (epoch, mean loss)
};

struct TrainResult {
  double initial_loss = 0.0;  // first batch, before any update
  std::vector<double> epoch_loss;
  long steps = 0;
  bool aborted = false;
  std::string message;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace detail {

inline std::vector<Matrix> snapshot(const nn::TensorRefs& params) {
  std::vector<Matrix> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

inline void restore(const nn::TensorRefs& params, const std::vector<Matrix>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

/// Generic epoch loop. `step_fn(batch_indices, epoch)` runs forward and
/// backward for one batch and returns the loss; the optimizer step happens
/// here. Non-finite loss or gradients restore the last good parameters and
/// stop training.
template <typename StepFn>
TrainResult run_epochs(const nn::TensorRefs& params, std::size_t items,
                       const TrainOptions& opt, StepFn&& step_fn,
                       std::function<std::vector<std::size_t>(int, std::mt19937_64&)> order_fn = {}) {
  TrainResult r;
  if (items == 0) {
    r.aborted = true;
    r.message = "empty training set";
    return r;
  }
  nn::Adam adam;
  const long per_epoch = static_cast<long>((items + opt.batch - 1) / opt.batch);
  const long total = per_epoch * opt.epochs;
  std::vector<Matrix> good = snapshot(params);
  std::mt19937_64 rng(mix_seed(opt.seed, 0xe90c));
  bool first = true;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (order_fn) {
      order = order_fn(epoch, rng);
    } else {
      order.resize(items);
      for (std::size_t i = 0; i < items; ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
    }
    double sum = 0;
    long batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(opt.batch)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(opt.batch));
      const std::vector<std::size_t> batch(order.begin() + b0, order.begin() + b1);
      nn::zero_grads(params);
      const double loss = step_fn(batch, epoch);
      if (!std::isfinite(loss) || !nn::grads_finite(params)) {
        restore(params, good);
        r.aborted = true;
        r.message = "non-finite loss at epoch " + std::to_string(epoch) + "; restored last good parameters";
        return r;
      }
      if (first) {
        r.initial_loss = loss;
        first = false;
      }
      nn::clip_grad_norm(params, opt.clip);
      adam.step(params, nn::one_cycle_lr(r.steps, total, opt.lr));
      ++r.steps;
      sum += loss;
      ++batches;
    }
    good = snapshot(params);
    const double mean = batches > 0 ? sum / static_cast<double>(batches) : 0.0;
    r.epoch_loss.push_back(mean);
    if (opt.on_epoch) opt.on_epoch(epoch, mean);
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GRM
// ---------------------------------------------------------------------------

/// Tracks of `cls` usable for GRM / PRM supervision.
inline std::vector<const CorpusTrack*> supervised_tracks(std::span<const CorpusTrack> corpus,
                                                         ClassId cls) {
  std::vector<const CorpusTrack*> out;
  for (const auto& c : corpus) {
    if (c.track.cls != cls || c.gt_index < 0 || c.sample.total_points() == 0) continue;
    bool any_gt = false;
    bool gt_with_points = false;
    for (std::size_t i = 0; i < c.gt.size(); ++i) {
      any_gt = any_gt || c.gt[i].has_value();
      gt_with_points = gt_with_points || (c.gt[i] && !c.sample.per_frame_points[i].empty());
    }
    if (any_gt && gt_with_points) out.push_back(&c);
  }
  return out;
}

/// Size target for a query entry: that frame's gt, else the track's first gt.
inline Size3 gt_size_for(const std::vector<std::optional<Box3D>>& gt, std::size_t entry) {
  const std::optional<Box3D>* g = &gt[entry];
  if (!*g)
    for (const auto& x : gt)
      if (x) {
        g = &x;
        break;
      }
  return {(*g)->l, (*g)->w, (*g)->h};
}

inline TrainResult train_grm(GrmModel& model, std::span<const CorpusTrack> corpus,
                             const TrainOptions& opt) {
  const auto tracks = supervised_tracks(corpus, model.cls);
  model.set_training(true);
  const auto params = model.params();
  auto step = [&](const std::vector<std::size_t>& batch, int epoch) {
    std::vector<GeometryPointSet> sets;
    std::vector<Size3> targets;
    for (std::size_t idx : batch) {
      const CorpusTrack& c = *tracks[idx];
      std::mt19937_64 rng(mix_seed(opt.seed, mix_seed(static_cast<std::uint64_t>(epoch), idx)));
      SampleTransform t;
      if (opt.augment) t = random_transform(rng);
      const ObjectSample s = transform_sample(c.sample, t);
      const auto gt = transform_gt(c.gt, t);
      sets.push_back(build_geometry_set(s, opt.geometry, rng()));
      for (std::size_t e : sets.back().query_entries) targets.push_back(gt_size_for(gt, e));
    }
    std::vector<const GeometryPointSet*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s);
    const Matrix out = model.forward(stack_geometry(ptrs));
    const LossAndGrad lg = grm_loss_batch(out, model.anchors, targets);
    model.backward(lg.grad);
    return lg.loss;
  };
  TrainResult r = detail::run_epochs(params, tracks.size(), opt, step);
  model.set_training(false);
  return r;
}

// ---------------------------------------------------------------------------
// PRM
// ---------------------------------------------------------------------------

/// Random frame deprecation (keeps at least two entries) and a random
/// window of at most `crop_frames` frames.
inline std::vector<std::size_t> prm_training_entries(const ObjectSample& s, const TrainOptions& opt,
                                                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto windows = frame_windows(s.frame_indices, opt.crop_frames);
  std::size_t first = 0, last = s.size();
  if (windows.size() > 1 || s.size() > 1) {
    // Start anywhere such that the window still covers crop_frames when possible.
    std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
    first = pick(rng);
    while (first > 0 && s.frame_indices.back() - s.frame_indices[first] + 1 < opt.crop_frames) --first;
    last = first + 1;
    while (last < s.size() && s.frame_indices[last] - s.frame_indices[first] < opt.crop_frames) ++last;
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = first; i < last; ++i)
    if (u(rng) >= opt.frame_drop) keep.push_back(i);
  if (keep.size() < 2) {
    keep.clear();
    for (std::size_t i = first; i < last; ++i) keep.push_back(i);
  }
  return keep;
}

inline ObjectSample pick_entries(const ObjectSample& s, std::span<const std::size_t> idx) {
  ObjectSample o;
  o.track_id = s.track_id;
  o.cls = s.cls;
  for (std::size_t i : idx) {
    o.frame_indices.push_back(s.frame_indices[i]);
    o.per_frame_points.push_back(s.per_frame_points[i]);
    o.boxes.push_back(s.boxes[i]);
    o.scores.push_back(s.scores[i]);
  }
  return o;
}

/// Targets for every valid slot of `set` in stacked order.
inline std::vector<PositionTarget> prm_targets(const PositionPointSet& set,
                                               const std::vector<std::optional<Box3D>>& gt) {
  std::vector<PositionTarget> out;
  for (int slot = 0; slot < set.length_pad; ++slot) {
    if (!set.valid[slot]) continue;
    const auto e = static_cast<std::size_t>(set.slot_entry[slot]);
    if (gt[e]) {
      out.push_back(position_target(set.local_boxes[e], box_in_frame_of(set.reference, *gt[e])));
    } else {
      out.emplace_back();
    }
  }
  return out;
}

inline TrainResult train_prm(PrmModel& model, std::span<const CorpusTrack> corpus,
                             const TrainOptions& opt) {
  const auto tracks = supervised_tracks(corpus, model.cls);
  model.set_training(true);
  const auto params = model.params();
  PositionSetOptions popt = opt.position;
  popt.length_pad = opt.crop_frames;
  popt.inference = false;
  auto step = [&](const std::vector<std::size_t>& batch, int epoch) {
    std::vector<PositionPointSet> sets;
    std::vector<PositionTarget> targets;
    for (std::size_t idx : batch) {
      const CorpusTrack& c = *tracks[idx];
      std::mt19937_64 rng(mix_seed(opt.seed, mix_seed(static_cast<std::uint64_t>(epoch), idx)));
      SampleTransform t;
      if (opt.augment) t = random_transform(rng);
      std::vector<std::size_t> keep;
      if (opt.augment) {
        keep = prm_training_entries(c.sample, opt, rng);
      } else {
        const auto w = frame_windows(c.sample.frame_indices, opt.crop_frames);
        for (std::size_t i = w.front().first; i < w.front().second; ++i) keep.push_back(i);
      }
      ObjectSample s = transform_sample(pick_entries(c.sample, keep), t);
      std::vector<std::optional<Box3D>> gt;
      for (std::size_t i : keep) gt.push_back(c.gt[i]);
      gt = transform_gt(gt, t);
      if (s.total_points() == 0) continue;
      sets.push_back(build_position_set(s, popt, rng()));
      const auto tg = prm_targets(sets.back(), gt);
      targets.insert(targets.end(), tg.begin(), tg.end());
    }
    if (sets.empty()) return 0.0;
    std::vector<const PositionPointSet*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s);
    const Matrix out = model.forward(stack_position(ptrs));
    const LossAndGrad lg = prm_loss_batch(out, targets);
    model.backward(lg.grad);
    return lg.loss;
  };
  TrainResult r = detail::run_epochs(params, tracks.size(), opt, step);
  model.set_training(false);
  return r;
}

// ---------------------------------------------------------------------------
// CRM
// ---------------------------------------------------------------------------

struct CrmExample {
  const CorpusTrack* track = nullptr;
  std::vector<Box3D> boxes;  // refined boxes fed to the model
  CrmTarget target;
};

/// Balanced epoch order: the minority label is drawn with replacement up
/// to the majority count; ignored examples appear once.
inline std::vector<std::size_t> balanced_order(std::span<const CrmExample> ex, std::mt19937_64& rng) {
  std::vector<std::size_t> pos, neg, rest;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (ex[i].target.label == 1) {
      pos.push_back(i);
    } else if (ex[i].target.label == 0) {
      neg.push_back(i);
    } else {
      rest.push_back(i);
    }
  }
  std::vector<std::size_t> order = rest;
  auto draw = [&](std::vector<std::size_t>& minority, std::size_t n) {
    std::uniform_int_distribution<std::size_t> pick(0, minority.size() - 1);
    order.insert(order.end(), minority.begin(), minority.end());
    for (std::size_t k = minority.size(); k < n; ++k) order.push_back(minority[pick(rng)]);
  };
  if (!pos.empty() && !neg.empty()) {
    if (pos.size() < neg.size()) {
      order.insert(order.end(), neg.begin(), neg.end());
      draw(pos, neg.size());
    } else {
      order.insert(order.end(), pos.begin(), pos.end());
      draw(neg, pos.size());
    }
  } else {
    order.insert(order.end(), pos.begin(), pos.end());
    order.insert(order.end(), neg.begin(), neg.end());
  }
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline TrainResult train_crm(CrmModel& model, std::span<const CrmExample> examples,
                             const TrainOptions& opt) {
  std::vector<CrmExample> usable;
  for (const auto& e : examples)
    if (e.track->track.cls == model.cls && e.track->sample.total_points() > 0) usable.push_back(e);
  model.set_training(true);
  const auto params = model.params();
  auto step = [&](const std::vector<std::size_t>& batch, int epoch) {
    std::vector<GeometryPointSet> sets;
    std::vector<CrmTarget> targets;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const CrmExample& ex = usable[batch[k]];
      std::mt19937_64 rng(mix_seed(opt.seed, mix_seed(static_cast<std::uint64_t>(epoch), batch[k] * 131 + k)));
      SampleTransform t;
      if (opt.augment) t = random_transform(rng);
      const ObjectSample s = transform_sample(with_boxes(ex.track->sample, ex.boxes), t);
      sets.push_back(build_geometry_set(s, opt.geometry, rng()));
      targets.push_back(ex.target);
    }
    std::vector<const GeometryPointSet*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s);
    const Matrix out = model.forward(stack_geometry(ptrs));
    const LossAndGrad lg = crm_loss_batch(out, targets);
    model.backward(lg.grad);
    return lg.loss;
  };
  auto order = [&](int, std::mt19937_64& rng) { return balanced_order(usable, rng); };
  TrainResult r = detail::run_epochs(params, usable.size(), opt, step, order);
  model.set_training(false);
  return r;
}

}  // namespace offtrack
