#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "offtrack/geom.hpp"
#include "oracles.hpp"

using namespace offtrack;

TEST(Yaw, NormalizeRange) {
  for (double a : {-10.0, -kPi, -1.0, 0.0, 1.0, kPi, 3 * kPi, 10.0}) {
    const double y = normalize_yaw(a);
    EXPECT_GT(y, -kPi - 1e-15);
    EXPECT_LE(y, kPi + 1e-15);
    EXPECT_NEAR(std::sin(y), std::sin(a), 1e-12);
    EXPECT_NEAR(std::cos(y), std::cos(a), 1e-12);
  }
  EXPECT_DOUBLE_EQ(normalize_yaw(-kPi), kPi);
}

TEST(Yaw, AngleDiffIsSymmetricAndBounded) {
  EXPECT_NEAR(angle_diff(kPi - 0.1, -kPi + 0.1), 0.2, 1e-12);
  EXPECT_NEAR(angle_diff(0, kPi), kPi, 1e-12);
  EXPECT_NEAR(angle_diff(0.3, 0.1), angle_diff(0.1, 0.3), 1e-15);
}

TEST(Box, MakeBoxValidates) {
  EXPECT_THROW(make_box(0, 0, 0, 0, 1, 1, 0), GeometryError);
  EXPECT_THROW(make_box(0, 0, 0, 1, -1, 1, 0), GeometryError);
  EXPECT_THROW(make_box(NAN, 0, 0, 1, 1, 1, 0), GeometryError);
  EXPECT_NEAR(make_box(0, 0, 0, 1, 1, 1, 7.0).yaw, 7.0 - 2 * kPi, 1e-12);
}

TEST(Iou, IdenticalAndDisjoint) {
  const Box3D a = make_box(1, 2, 0.5, 4, 2, 1.5, 0.7);
  EXPECT_NEAR(iou_bev(a, a), 1.0, 1e-12);
  EXPECT_NEAR(iou_3d(a, a), 1.0, 1e-12);
  const Box3D far = make_box(20, 2, 0.5, 4, 2, 1.5, 0.7);
  EXPECT_EQ(iou_bev(a, far), 0.0);
  Box3D above = a;
  above.cz += 2.0;
  EXPECT_GT(iou_bev(a, above), 0.99);
  EXPECT_EQ(iou_3d(a, above), 0.0);
}

TEST(Iou, AxisAlignedClosedForm) {
  // 4x2 boxes shifted by 1 along x: inter 3*2 = 6, union 16 - 6 = 10.
  const Box3D a = make_box(0, 0, 0, 4, 2, 2, 0);
  const Box3D b = make_box(1, 0, 0, 4, 2, 2, 0);
  EXPECT_NEAR(iou_bev(a, b), 0.6, 1e-12);
  // Half-height vertical shift: inter 6*1, union 16 - 6.
  Box3D c = b;
  c.cz = 1.0;
  EXPECT_NEAR(iou_3d(a, c), 6.0 / 26.0, 1e-12);
}

TEST(Iou, SymmetricAndHeadingFlipInvariant) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    auto [a, b] = oracle::random_pair(rng);
    EXPECT_NEAR(iou_3d(a, b), iou_3d(b, a), 1e-12);
    Box3D flipped = b;
    flipped.yaw = normalize_yaw(b.yaw + kPi);
    EXPECT_NEAR(iou_bev(a, b), iou_bev(a, flipped), 1e-9);
  }
}

TEST(Iou, MatchesSampledOracle) {
  std::mt19937_64 rng(2);
  std::mt19937_64 mc(3);
  for (int i = 0; i < 25; ++i) {
    auto [a, b] = oracle::random_pair(rng);
    const auto o = oracle::sample_overlap(a, b, 200000, mc);
    EXPECT_NEAR(iou_bev(a, b), o.iou_bev, 1e-2) << i;
    EXPECT_NEAR(iou_3d(a, b), o.iou_3d, 1e-2) << i;
    EXPECT_NEAR(overlap_ratio(a, b), o.ratio, 1e-2) << i;
  }
}

TEST(OverlapRatio, ContainedBoxIsFullyCovered) {
  const Box3D car = make_box(0, 0, 0.8, 4.5, 2.0, 1.6, 0.3);
  const Box3D ped = make_box(0.5, 0.2, 0.9, 0.6, 0.6, 1.7, 0.3);
  EXPECT_DOUBLE_EQ(overlap_ratio(car, ped), 1.0);
  EXPECT_LT(overlap_ratio(ped, car), 0.1);
  EXPECT_LT(iou_3d(car, ped), 0.2);
}

TEST(Frames, BoxFrameRoundTrip) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    auto [ref, b] = oracle::random_pair(rng);
    const Box3D back = box_from_frame_of(ref, box_in_frame_of(ref, b));
    EXPECT_NEAR(back.cx, b.cx, 1e-12);
    EXPECT_NEAR(back.cy, b.cy, 1e-12);
    EXPECT_NEAR(back.cz, b.cz, 1e-12);
    EXPECT_NEAR(angle_diff(back.yaw, b.yaw), 0.0, 1e-12);
  }
}

TEST(Frames, TransformBoxMovesCorners) {
  const Pose p = Pose::from_yaw(0.8, Vec3(3, -2, 1));
  const Box3D b = make_box(5, 1, 0.5, 4, 2, 1.5, -0.4);
  const Box3D t = transform_box(b, p);
  const auto cb = corners(b);
  const auto ct = corners(t);
  // Same corner set up to ordering: compare by nearest match.
  for (const auto& c : cb) {
    const Vec3 moved = p.apply(c);
    double best = 1e9;
    for (const auto& d : ct) best = std::min(best, (moved - d).norm());
    EXPECT_LT(best, 1e-9);
  }
  const Box3D back = transform_box(t, p.inverse());
  EXPECT_NEAR(back.cx, b.cx, 1e-12);
  EXPECT_NEAR(back.yaw, b.yaw, 1e-12);
}

TEST(Frames, TiltedPoseRejected) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(0.1, Vec3::UnitX()).toRotationMatrix();
  EXPECT_THROW(transform_box(make_box(0, 0, 0, 1, 1, 1, 0), p), GeometryError);
}

TEST(Membership, ClosedBoundaryAndScale) {
  const Box3D b = make_box(0, 0, 0, 2, 2, 2, 0);
  EXPECT_TRUE(point_in_box(b, Vec3(1, 1, 1)));
  EXPECT_FALSE(point_in_box(b, Vec3(1.01, 0, 0)));
  EXPECT_TRUE(point_in_box(b, Vec3(1.05, 0, 0), 1.1));
}
