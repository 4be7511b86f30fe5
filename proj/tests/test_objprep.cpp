#include <gtest/gtest.h>

#include "offtrack/objprep.hpp"

using namespace offtrack;

namespace {

// Three frames, identity poses except the last, a 4x2x2 box at x = 10 with
// two interior points, one point just outside (inside at alpha 1.1), one far.
std::vector<PointCloudFrame> frames() {
  std::vector<PointCloudFrame> out(3);
  for (int f = 0; f < 3; ++f) {
    out[f].frame_index = f;
    out[f].pose = f == 2 ? Pose::from_yaw(0.0, Vec3(1, 0, 0)) : Pose{};
    out[f].points = {{10, 0, 1, 0.5, 0}, {11, 0.5, 1.5, 0.2, 0}, {12.1, 0, 1, 0.1, 0}, {30, 0, 1, 0.3, 0}};
  }
  return out;
}

Track track() {
  Track t;
  t.track_id = 4;
  for (int f = 0; f < 3; ++f) t.entries.push_back({f, make_box(10 + (f == 2), 0, 1, 4, 2, 2, 0), 0.3 + 0.2 * f, true});
  return t;
}

}  // namespace

TEST(Extract, RoiScaleAndWorldFrame) {
  const auto fr = frames();
  const auto tight = extract_object_points(track(), fr, 1.0);
  const auto loose = extract_object_points(track(), fr, 1.1);
  EXPECT_EQ(tight.per_frame_points[0].size(), 2u);
  EXPECT_EQ(loose.per_frame_points[0].size(), 3u);
  // Frame 2 is shifted by the pose; its box moved with it.
  EXPECT_EQ(loose.per_frame_points[2].size(), 3u);
  EXPECT_DOUBLE_EQ(loose.per_frame_points[2][0].x, 11.0);
  const auto shared = extract_object_points(track(), to_world_frames(fr), 1.1);
  EXPECT_EQ(shared.total_points(), loose.total_points());
  Track bad = track();
  bad.entries.push_back({7, make_box(0, 0, 0, 1, 1, 1, 0), 0.1, true});
  EXPECT_THROW(extract_object_points(bad, fr, 1.1), StructureError);
}

TEST(Encoding, PlaneDistancesNegativeInside) {
  const Box3D b = make_box(1, 1, 0, 4, 2, 2, kPi / 2);
  const auto d = p2s_encode(Vec3(1, 1.5, 0.25), b);  // local (0.5, 0, 0.25)
  const std::array<double, 6> expect{-1.5, -2.5, -1.0, -1.0, -0.75, -1.25};
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(d[k], expect[k], 1e-12) << k;
  const auto out = p2s_encode(Vec3(1, 4, 0), b);
  EXPECT_GT(out[0], 0);
}

TEST(Encoding, CornerOffsetsFollowCornerOrder) {
  const Box3D b = make_box(2, -1, 0.5, 4, 2, 1, 0.4);
  const Vec3 p(3, 0, 1);
  const auto e = p2co_encode(p, b);
  const auto cs = corners(b);
  for (int c = 0; c < 8; ++c)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(e[3 + 3 * c + k], (p - cs[c])(k), 1e-12);
  EXPECT_NEAR(e[0], 1.0, 1e-12);
}

TEST(GeometrySet, ShapesAndHighestScoreQueries) {
  const auto s = extract_object_points(track(), frames(), 1.1);
  GeometrySetOptions opt{2, 8, 16, true};
  const auto g = build_geometry_set(s, opt, 1);
  EXPECT_EQ(g.query_rows.rows(), 16);
  EXPECT_EQ(g.query_rows.cols(), kGeometryQueryWidth);
  EXPECT_EQ(g.value_rows.rows(), 16);
  EXPECT_EQ(g.value_rows.cols(), kGeometryValueWidth);
  EXPECT_EQ(g.query_entries, (std::vector<std::size_t>{2, 1}));
  EXPECT_DOUBLE_EQ(g.query_rows(0, 10), s.scores[2]);
  EXPECT_DOUBLE_EQ(g.proposal_sizes(0, 0), 4.0);
  // Query points sit in their own box frame: all x within the scaled extent.
  EXPECT_LE(g.query_rows.col(0).cwiseAbs().maxCoeff(), 2.2 + 1e-12);
  const auto again = build_geometry_set(s, opt, 1);
  EXPECT_EQ(g.value_rows, again.value_rows);
}

TEST(GeometrySet, EmptyTrackThrows) {
  auto fr = frames();
  for (auto& f : fr) f.points.clear();
  const auto s = extract_object_points(track(), fr, 1.1);
  EXPECT_THROW(build_geometry_set(s, {}, 0), EmptySampleError);
  EXPECT_THROW(build_position_set(s, {}, 0), EmptySampleError);
}

TEST(PositionSet, SlotsByFrameOffsetAndPadding) {
  auto fr = frames();
  fr[1].points.clear();
  const auto s = extract_object_points(track(), fr, 1.1);
  PositionSetOptions opt{2, 4, 8, true};
  const auto ps = build_position_set(s, opt, 3);
  EXPECT_EQ(ps.length_pad, 3);  // grown to the span
  EXPECT_EQ(ps.reference_entry, 1u);
  EXPECT_EQ(ps.valid, (std::vector<char>{1, 0, 1}));
  EXPECT_EQ(ps.slot_entry, (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_EQ(ps.rows.rows(), 12);
  EXPECT_EQ(ps.rows.block(4, 0, 4, kPositionQueryWidth).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(ps.value_rows.rows(), 8);
  EXPECT_EQ(ps.valid_count(), 2u);
  // Reference box is the identity in its own frame.
  EXPECT_NEAR(ps.local_boxes[1].cx, 0.0, 1e-12);
  EXPECT_NEAR(ps.local_boxes[2].cx, 1.0, 1e-12);
}
