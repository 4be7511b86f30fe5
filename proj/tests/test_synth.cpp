#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "offtrack/synth.hpp"

using namespace offtrack;

namespace {

ScenarioConfig quiet_scene() {
  ScenarioConfig c;
  c.frame_count = 20;
  c.point_noise_sigma = 0;
  c.center_sigma = c.center_sigma_z = c.size_sigma = c.yaw_sigma = 0;
  c.fn_rate = 0;
  c.fp_per_frame = 0;
  return c;
}

ObjectSpec cube(double x, double y, double side = 2.0) {
  ObjectSpec o;
  o.size = {side, side, side};
  o.x = x;
  o.y = y;
  return o;
}

// Distance from a point to the surface of a box (0 for points on a face).
double face_distance(const Box3D& b, const Vec3& p) {
  const Vec3 q = to_box_local(b, p);
  const double h[3] = {b.l / 2, b.w / 2, b.h / 2};
  double best = 1e300;
  for (int k = 0; k < 3; ++k) {
    double outside = 0;
    for (int j = 0; j < 3; ++j)
      if (j != k) outside = std::max(outside, std::abs(q(j)) - h[j]);
    const double d = std::abs(std::abs(q(k)) - h[k]);
    best = std::min(best, std::max(d, outside));
  }
  return best;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synth, CleanCorruptionReproducesGroundTruth) {
  ScenarioConfig c = quiet_scene();
  c.objects = {cube(10, 0), cube(-8, 6)};
  c.objects[1].motion = MotionKind::kConstantVelocity;
  c.objects[1].speed = 3;
  const auto b = generate(c);
  ASSERT_EQ(b.detections.size(), 20u);
  for (std::size_t f = 0; f < 20; ++f) {
    ASSERT_EQ(b.detections[f].size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
      const Box3D& d = b.detections[f][k].box;
      const Box3D& g = (*b.gt_tracks)[k].entries[f].box;
      EXPECT_EQ(to_array(d), to_array(g));
    }
  }
}

TEST(Synth, FullDropRemovesAllGtDetections) {
  ScenarioConfig c = quiet_scene();
  c.objects = {cube(10, 0)};
  c.fn_rate = 1.0;
  const auto b = generate(c);
  for (const auto& f : b.detections) EXPECT_TRUE(f.empty());
}

TEST(Synth, DropFractionConcentrates) {
  ScenarioConfig c = quiet_scene();
  c.frame_count = 200;
  c.points_per_m2_at_10m = 0;
  for (int i = 0; i < 10; ++i) c.objects.push_back(cube(-40 + 8.0 * i, 10));
  c.fn_rate = 0.2;
  c.seed = 17;
  const auto dets = corrupt(ground_truth(c), generate_scene(c).frames, c);
  std::size_t kept = 0;
  for (const auto& f : dets) kept += f.size();
  const double dropped = 1.0 - static_cast<double>(kept) / 2000.0;
  EXPECT_GE(dropped, 0.17);
  EXPECT_LE(dropped, 0.23);
}

TEST(Synth, DensityFallsWithSquaredRange) {
  // One cube at 10 m and one at 20 m; only the face toward the sensor is
  // visible for each, so the count ratio follows (10/20)^2.
  ScenarioConfig c = quiet_scene();
  c.frame_count = 100;
  c.points_per_m2_at_10m = 50;
  // Opposite sides of the sensor; near faces at 10 m and 20 m.
  c.objects = {cube(11, 0), cube(-21, 0)};
  const auto b = generate_scene(c);
  std::size_t near = 0, far = 0;
  for (const auto& f : b.frames)
    for (const auto& p : f.points) (p.x > 0 ? near : far) += 1;
  const double ratio = static_cast<double>(far) / static_cast<double>(near);
  EXPECT_NEAR(ratio, 0.25, 0.025);
}

TEST(Synth, ArcCentersLieOnCircle) {
  ScenarioConfig c = quiet_scene();
  ObjectSpec o = cube(5, -3);
  o.motion = MotionKind::kArc;
  o.radius = 12.5;
  o.angular_rate = -0.4;
  o.yaw = 0.7;
  c.objects = {o};
  const Vec3 center = arc_center(o);
  const auto gt = ground_truth(c);
  for (const auto& e : gt[0].entries) {
    const double r = std::hypot(e.box.cx - center.x(), e.box.cy - center.y());
    EXPECT_NEAR(r, 12.5, 1e-9);
  }
}

TEST(Synth, PointsLieOnVisibleFacesBeforeNoise) {
  std::mt19937_64 rng(3);
  const Box3D b = make_box(12, 4, 1, 4.2, 1.8, 1.5, 0.6);
  const Vec3 sensor(0, 0, 1.8);
  const auto pts = sample_visible_faces(b, sensor, 200, 0.05, rng);
  ASSERT_GT(pts.size(), 50u);
  for (const auto& s : pts) {
    EXPECT_LT(face_distance(b, s.on_face), 1e-9);
    // Sensor-facing: the outward normal at the sampled face points toward the sensor.
    const Vec3 q = to_box_local(b, s.on_face);
    const Vec3 s_local = to_box_local(b, sensor);
    const double h[3] = {b.l / 2, b.w / 2, b.h / 2};
    for (int k = 0; k < 3; ++k)
      if (std::abs(std::abs(q(k)) - h[k]) < 1e-9) {
        EXPECT_GT(q(k) * s_local(k) - q(k) * q(k), -1e-9);
      }
  }
}

TEST(Synth, StaticSceneRepeatsWithoutNoise) {
  ScenarioConfig c = quiet_scene();
  c.objects = {cube(10, 0)};
  const auto b = generate_scene(c);
  // Sample counts vary with the stream but every point sits on the same face set.
  const Box3D& g = (*b.gt_tracks)[0].entries[0].box;
  for (const auto& f : b.frames)
    for (const auto& p : f.points) EXPECT_LT(face_distance(g, f.pose.apply(p.xyz())), 1e-5);
}

TEST(Synth, GroundTruthIsComplete) {
  ScenarioConfig c = quiet_scene();
  c.objects = {cube(10, 0), cube(-10, 0)};
  c.objects[1].first_frame = 5;
  c.objects[1].last_frame = 12;
  const auto gt = ground_truth(c);
  EXPECT_EQ(gt[0].entries.size(), 20u);
  ASSERT_EQ(gt[1].entries.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(gt[1].entries[i].frame_index, 5 + static_cast<std::int64_t>(i));
  EXPECT_EQ(gt[0].track_id, "gt_0");
}

TEST(Synth, OverlapAtStartIsRejected) {
  ScenarioConfig c = quiet_scene();
  c.objects = {cube(10, 0), cube(10.5, 0.5)};
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Synth, InvalidRatesAreRejected) {
  ScenarioConfig c = quiet_scene();
  c.fn_rate = 1.5;
  EXPECT_THROW(validate(c), ConfigError);
  c.fn_rate = 0.1;
  c.center_sigma = -1;
  EXPECT_THROW(validate(c), ConfigError);
  c.center_sigma = 0;
  c.frame_count = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Synth, DeterministicOnDisk) {
  ScenarioConfig c = benchmark_scenario(11, 6);
  c.frame_count = 15;
  const auto tmp = std::filesystem::temp_directory_path() / "offtrack_synth_det";
  std::filesystem::remove_all(tmp);
  save_sequence(generate(c), tmp / "a");
  save_sequence(generate(c), tmp / "b");
  for (const char* name : {"frames.jsonl", "detections.jsonl", "gt_tracks.jsonl", "points/7.f32le"})
    EXPECT_EQ(read_all(tmp / "a" / name), read_all(tmp / "b" / name)) << name;
  c.seed = 12;
  save_sequence(generate(c), tmp / "c");
  EXPECT_NE(read_all(tmp / "a" / "detections.jsonl"), read_all(tmp / "c" / "detections.jsonl"));
  std::filesystem::remove_all(tmp);
}

TEST(Synth, BenchmarkLanesDoNotCross) {
  const ScenarioConfig c = benchmark_scenario(5);
  const auto gt = ground_truth(c);
  ASSERT_EQ(gt.size(), 20u);
  for (std::size_t f = 0; f < 200; f += 5)
    for (std::size_t i = 0; i < gt.size(); ++i)
      for (std::size_t j = i + 1; j < gt.size(); ++j)
        EXPECT_EQ(iou_bev(gt[i].entries[f].box, gt[j].entries[f].box), 0.0);
}

TEST(Synth, ScenarioFileParses) {
  const auto cfg = parse_config_string(R"(
seed = 9
frame_count = 30
[sensor]
speed = 2.0
[detection]
fn_rate = 0.1
fp_per_frame = 0.5
[[object]]
class = "pedestrian"
motion = "arc"
x = 4.0
y = 2
radius = 8.0
angular_rate = 0.2
[[clutter]]
size = [1, 1, 2]
x = 30
)");
  const auto c = scenario_from_config(cfg);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.frame_count, 30);
  EXPECT_DOUBLE_EQ(c.sensor.speed, 2.0);
  EXPECT_DOUBLE_EQ(c.fn_rate, 0.1);
  ASSERT_EQ(c.objects.size(), 1u);
  EXPECT_EQ(c.objects[0].cls, ClassId::kPedestrian);
  EXPECT_EQ(c.objects[0].motion, MotionKind::kArc);
  EXPECT_DOUBLE_EQ(c.objects[0].y, 2.0);
  ASSERT_EQ(c.clutter.size(), 1u);
  EXPECT_DOUBLE_EQ(c.clutter[0].size[2], 2.0);
  EXPECT_THROW(scenario_from_config(parse_config_string("[[object]]\nmotion = \"spiral\"\n")),
               ConfigError);
}
