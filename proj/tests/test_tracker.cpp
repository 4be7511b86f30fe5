#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "offtrack/tracker.hpp"

using namespace offtrack;

namespace {

double brute_min_cost(const Eigen::MatrixXd& c) {
  // Rows <= cols: try every injective row -> col map via column permutations.
  std::vector<int> cols(c.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (int i = 0; i < c.rows(); ++i) s += c(i, cols[i]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

Detection det(double x, double y, double score, std::int64_t f, ClassId c = ClassId::kVehicle) {
  return {make_box(x, y, 0.8, 4.0, 2.0, 1.6, 0.0), score, c, f, 20};
}

// One car moving +1 m/frame along x for n frames, with the detections of the
// listed frames removed.
FrameDetections moving_car(int n, std::vector<int> missing = {}) {
  FrameDetections fd(n);
  for (int f = 0; f < n; ++f)
    if (std::find(missing.begin(), missing.end(), f) == missing.end()) fd[f].push_back(det(f * 1.0, 0, 0.9, f));
  return fd;
}

}  // namespace

TEST(Assignment, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = 1 + static_cast<int>(rng() % 5), c = r + static_cast<int>(rng() % 3);
    Eigen::MatrixXd cost(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) cost(i, j) = trial % 4 == 0 ? std::round(u(rng) * 3) : u(rng);
    const auto a = solve_assignment(cost);
    double s = 0;
    std::vector<char> used(c, 0);
    for (int i = 0; i < r; ++i) {
      ASSERT_GE(a[i], 0);
      ASSERT_FALSE(used[a[i]]);
      used[a[i]] = 1;
      s += cost(i, a[i]);
    }
    EXPECT_NEAR(s, brute_min_cost(cost), 1e-9) << trial;
    // Transposed problem leaves exactly c - r columns unmatched.
    const auto t = solve_assignment(cost.transpose());
    EXPECT_EQ(std::count(t.begin(), t.end(), -1), c - r);
  }
}

TEST(Assignment, EmptyInputs) {
  EXPECT_TRUE(solve_assignment(Eigen::MatrixXd(0, 3)).empty());
  EXPECT_EQ(solve_assignment(Eigen::MatrixXd(2, 0)), (std::vector<int>{-1, -1}));
}

TEST(Associate, ThresholdAppliedAfterSolving) {
  const std::vector<Box3D> pred{make_box(0, 0, 0, 4, 2, 2, 0), make_box(10, 0, 0, 4, 2, 2, 0)};
  const std::vector<Box3D> dets{make_box(1, 0, 0, 4, 2, 2, 0), make_box(13.5, 0, 0, 4, 2, 2, 0)};
  const auto a = associate(pred, dets, 0.3);
  ASSERT_EQ(a.matches.size(), 1u);
  EXPECT_EQ(a.matches[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(a.unmatched_tracks, std::vector<std::size_t>{1});
  EXPECT_EQ(a.unmatched_dets, std::vector<std::size_t>{1});
}

TEST(Predict, ConstantVelocityFromTwoUpdates) {
  Track t;
  t.entries = {{0, make_box(0, 0, 0, 4, 2, 2, 0.1), 0.9, true},
               {2, make_box(2, 4, 0, 4, 2, 2, 0.2), 0.9, true},
               {3, make_box(50, 50, 0, 4, 2, 2, 0.0), 0.0, false}};
  const Box3D p = predict(t, 4);
  EXPECT_NEAR(p.cx, 4.0, 1e-12);
  EXPECT_NEAR(p.cy, 8.0, 1e-12);
  EXPECT_NEAR(p.yaw, 0.2, 1e-12);
  Track one;
  one.entries = {{0, make_box(1, 1, 0, 4, 2, 2, 0), 0.9, true}};
  EXPECT_EQ(predict(one, 7), one.entries[0].box);
}

TEST(Tracker, BridgesGapsWithoutEmittingPlaceholders) {
  const auto tracks = run_tracker(moving_car(20, {5, 6, 7}), ClassThresholds{}, Direction::kForward);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].entries.size(), 17u);
  for (const auto& e : tracks[0].entries) {
    EXPECT_TRUE(e.updated);
    EXPECT_NE(e.frame_index, 6);
  }
}

TEST(Tracker, LowScoreDetectionsExtendButNeverBirth) {
  ClassThresholds thr;
  FrameDetections fd(6);
  fd[0].push_back(det(0, 0, 0.9, 0));
  for (int f = 1; f < 6; ++f) fd[f].push_back(det(f * 0.5, 0, 0.05, f));
  fd[3].push_back(det(30, 0, 0.05, 3));
  const auto tracks = run_tracker(fd, thr, Direction::kForward);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].entries.size(), 6u);
}

TEST(Tracker, ClassesNeverMix) {
  FrameDetections fd(4);
  for (int f = 0; f < 4; ++f) fd[f].push_back(det(0, 0, 0.9, f, f % 2 ? ClassId::kCyclist : ClassId::kVehicle));
  const auto tracks = run_tracker(fd, ClassThresholds{}, Direction::kForward);
  ASSERT_EQ(tracks.size(), 2u);
  for (const auto& t : tracks) EXPECT_EQ(t.entries.size(), 2u);
}

TEST(Tracker, DuplicateTracksMergeIntoEarlierBorn) {
  ClassThresholds thr;
  TrackerState s;
  Track a, b;
  a.track_id = 0;
  a.birth_frame = 0;
  a.entries = {{0, make_box(0, 0, 0, 4, 2, 2, 0), 0.5, true}, {1, make_box(1, 0, 0, 4, 2, 2, 0), 0.5, true}};
  b.track_id = 1;
  b.birth_frame = 1;
  b.entries = {{1, make_box(1.2, 0, 0, 4, 2, 2, 0), 0.8, true}};
  s.active_tracks = {a, b};
  merge_overlapping_tracks(s, 1, thr);
  ASSERT_EQ(s.active_tracks.size(), 1u);
  EXPECT_EQ(s.active_tracks[0].track_id, 0);
  ASSERT_EQ(s.active_tracks[0].entries.size(), 2u);
  EXPECT_DOUBLE_EQ(s.active_tracks[0].entries[1].score, 0.8);
}

TEST(Tracker, ReversePassCoversSameFrames) {
  const auto fd = moving_car(15, {9});
  const auto fwd = run_tracker(fd, ClassThresholds{}, Direction::kForward);
  const auto rev = run_tracker(fd, ClassThresholds{}, Direction::kReverse);
  ASSERT_EQ(fwd.size(), 1u);
  ASSERT_EQ(rev.size(), 1u);
  EXPECT_EQ(rev[0].entries.front().frame_index, 0);
  EXPECT_EQ(rev[0].entries.size(), fwd[0].entries.size());
}

TEST(Fusion, WeightedBoxAndYawFlip) {
  const Box3D a = make_box(0, 0, 0, 4, 2, 2, 0.1);
  const Box3D b = make_box(3, 0, 0, 4, 2, 2, 0.1 + kPi);
  const auto w = wbf_pair(a, 0.75, b, 0.25);
  EXPECT_NEAR(w.box.cx, 0.75, 1e-12);
  EXPECT_NEAR(w.box.yaw, 0.1, 1e-12);
  EXPECT_NEAR(w.score, 0.5, 1e-12);
  EXPECT_THROW(wbf_pair(a, 0, b, 0), Error);
}

TEST(Fusion, ReverseFillsForwardGap) {
  Track f, r;
  f.track_id = 3;
  for (int i = 0; i < 10; ++i)
    if (i != 4) f.entries.push_back({i, make_box(i, 0, 0, 4, 2, 2, 0), 0.9, true});
  r.track_id = 0;
  for (int i = 0; i < 10; ++i) r.entries.push_back({i, make_box(i, 0, 0, 4, 2, 2, 0), 0.9, true});
  Track lone;
  lone.track_id = 1;
  lone.entries = {{2, make_box(40, 0, 0, 4, 2, 2, 0), 0.9, true}};
  const auto fused = fuse_forward_reverse({f}, {r, lone});
  ASSERT_EQ(fused.size(), 2u);
  EXPECT_EQ(fused[0].track_id, 3);
  EXPECT_EQ(fused[0].entries.size(), 10u);
  EXPECT_EQ(fused[1].track_id, 4);
}

TEST(Baseline, DiesAfterConsecutiveMisses) {
  // Gap of 2 keeps the track, gap of 3 kills it.
  const auto two = run_baseline_tracker(moving_car(20, {5, 6}), ClassThresholds{});
  EXPECT_EQ(two.size(), 1u);
  const auto three = run_baseline_tracker(moving_car(20, {5, 6, 7}), ClassThresholds{});
  EXPECT_EQ(three.size(), 2u);
  const auto immortal = run_tracker(moving_car(20, {5, 6, 7}), ClassThresholds{}, Direction::kForward);
  EXPECT_EQ(immortal.size(), 1u);
}

TEST(Tracker, DeterministicAndRoundTrips) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 0.1);
  FrameDetections fd(30);
  for (int f = 0; f < 30; ++f)
    for (int k = 0; k < 5; ++k) fd[f].push_back(det(f * 0.8 + n(rng), k * 6 + n(rng), 0.5 + 0.1 * k, f));
  const auto a = track_sequence({"s", {}, fd, std::nullopt}, ClassThresholds{});
  const auto b = track_sequence({"s", {}, fd, std::nullopt}, ClassThresholds{});
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(track_to_json(a[i]), track_to_json(b[i]));
  const auto back = track_from_json(track_to_json(a[0]));
  EXPECT_EQ(back.track_id, a[0].track_id);
  EXPECT_EQ(back.entries.size(), a[0].entries.size());
}

TEST(Routing, ShortTracksPassThrough) {
  ClassThresholds thr;
  const auto tracks = run_tracker(moving_car(6), thr, Direction::kForward);
  auto long_tracks = run_tracker(moving_car(9), thr, Direction::kForward);
  long_tracks[0].track_id = 7;
  std::vector<Track> all = tracks;
  all.push_back(long_tracks[0]);
  const auto r = route_tracks(all, thr);
  ASSERT_EQ(r.refinable.size(), 1u);
  EXPECT_EQ(r.refinable[0].track_id, 7);
  EXPECT_EQ(r.passthrough.size(), 1u);
}
