#include <gtest/gtest.h>

#include <fstream>
#include <memory>
#include <sstream>

#include "offtrack/pipeline.hpp"

using namespace offtrack;

namespace {

const char* kCleanScenario = R"(
sequence_id = "clean"
frame_count = 40

[sensor]
speed = 2.0

[detection]
center_sigma = 0.0
center_sigma_z = 0.0
size_sigma = 0.0
yaw_sigma = 0.0
fn_rate = 0.0
fp_per_frame = 0.0

[[object]]
class = "vehicle"
motion = "constant_velocity"
x = -10.0
y = 6.0
speed = 5.0

[[object]]
class = "vehicle"
motion = "static"
x = 15.0
y = -6.0
yaw = 0.3
)";

const char* kToyTrain = R"(
[train]
scenes = 1
objects = 6
clutter = 2
hidden = 6
feature = 8
value_point = 8
heads = 2
grm_epochs = 1
prm_epochs = 1
crm_epochs = 1
points_per_query = 8
geometry_value_points = 16
points_per_frame = 4
position_value_points = 16
crop_frames = 16
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// A fresh work dir holding config.toml and scenario.toml; `extra` is
// appended to the config.
fs::path setup(const std::string& name, const std::string& extra = "") {
  const fs::path dir = fs::temp_directory_path() / ("offtrack_pipe_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "scenario.toml") << kCleanScenario;
  std::ofstream(dir / "config.toml") << "[paths]\nwork = \"work\"\n[synth]\nscenario = \"scenario.toml\"\n"
                                     << kToyTrain << extra;
  return dir;
}

std::unique_ptr<PipelineContext> context(const fs::path& dir, int jobs = 1) {
  PipelineConfig cfg = load_pipeline_config((dir / "config.toml").string());
  cfg.jobs = jobs;
  auto ctx = std::make_unique<PipelineContext>(cfg);
  ctx->log = nullptr;
  return ctx;
}

Json load_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

}  // namespace

TEST(Pipeline, CleanSequenceTracksPerfectlyAndRerunSkips) {
  const fs::path dir = setup("clean");
  std::size_t first_run = 0;
  {
    auto ctx = context(dir);
    run_pipeline(*ctx);
    first_run = ctx->executed;
    EXPECT_EQ(ctx->skipped, 0u);
  }
  const Json report = load_json(dir / "work" / "report.json");
  const Json& tracked = report["sequences"][0]["tracked"];
  ASSERT_TRUE(tracked.contains("vehicle"));
  EXPECT_DOUBLE_EQ(tracked["vehicle"]["mota"].get<double>(), 1.0);
  EXPECT_EQ(tracked["vehicle"]["counts"]["id_switches"].get<int>(), 0);
  // Only classes present in gt or output are reported.
  EXPECT_FALSE(tracked.contains("pedestrian"));
  EXPECT_FALSE(tracked.contains("cyclist"));

  auto again = context(dir);
  run_pipeline(*again);
  EXPECT_EQ(again->executed, 0u);
  EXPECT_EQ(again->skipped, first_run);
  fs::remove_all(dir);
}

TEST(Pipeline, RefineSeedOnlyTouchesRefinedArtifacts) {
  const fs::path dir = setup("seed");
  {
    auto ctx = context(dir);
    run_pipeline(*ctx, "refine");
  }
  const fs::path out = dir / "work" / "out" / "clean";
  const std::string tracks = slurp(out / "tracks.jsonl");
  const std::string labels = slurp(out / "labels.jsonl");
  const std::string model = slurp(dir / "work" / "models" / "grm_vehicle.ckpt");
  std::ofstream(dir / "config.toml", std::ios::app) << "[seeds]\nrefine = 99\n";
  auto ctx = context(dir);
  run_pipeline(*ctx, "refine");
  EXPECT_EQ(ctx->executed, 1u);  // refine only
  EXPECT_EQ(slurp(out / "tracks.jsonl"), tracks);
  EXPECT_EQ(slurp(dir / "work" / "models" / "grm_vehicle.ckpt"), model);
  EXPECT_NE(slurp(out / "labels.jsonl"), labels);
  fs::remove_all(dir);
}

TEST(Pipeline, ModifiedOutputIsRebuilt) {
  const fs::path dir = setup("tamper");
  {
    auto ctx = context(dir);
    run_pipeline(*ctx, "track");
  }
  const fs::path tracks = dir / "work" / "out" / "clean" / "tracks.jsonl";
  const std::string good = slurp(tracks);
  std::ofstream(tracks, std::ios::app) << "\n";
  auto ctx = context(dir);
  run_pipeline(*ctx, "track");
  EXPECT_EQ(ctx->executed, 1u);
  EXPECT_EQ(slurp(tracks), good);
  fs::remove_all(dir);
}

TEST(Pipeline, JobCountDoesNotChangeOutput) {
  const fs::path a = setup("jobs1"), b = setup("jobs4");
  {
    auto ctx = context(a, 1);
    run_pipeline(*ctx);
  }
  {
    auto ctx = context(b, 4);
    run_pipeline(*ctx);
  }
  for (const char* f : {"tracks.jsonl", "refined_tracks.jsonl", "labels.jsonl", "report.json"})
    EXPECT_EQ(slurp(a / "work" / "out" / "clean" / f), slurp(b / "work" / "out" / "clean" / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, UnknownStageAndBadConfigRejected) {
  const fs::path dir = setup("bad", "[run]\njobs = -2\n");
  EXPECT_THROW(load_pipeline_config((dir / "config.toml").string()), ConfigError);
  std::ofstream(dir / "config.toml") << "[train]\nfeature = 10\nheads = 4\n";
  EXPECT_THROW(load_pipeline_config((dir / "config.toml").string()), ConfigError);
  PipelineConfig cfg;
  cfg.work = dir / "work";
  PipelineContext ctx(cfg);
  EXPECT_THROW(run_pipeline(ctx, "polish"), ConfigError);
  fs::remove_all(dir);
}

TEST(Report, MissingReportNamesTheFile) {
  try {
    render_report("/nonexistent/report.json", fs::temp_directory_path() / "offtrack_plots");
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/report.json"), std::string::npos);
  }
}

TEST(Report, GoldenTable) {
  const fs::path dir = fs::temp_directory_path() / "offtrack_golden";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << R"({"sequences":[{"sequence_id":"s0",
    "tracked":{"vehicle":{"detection":{"ap":0.5,"aph":0.25},"mota":0.75,"motp":0.125,
      "recall_at_track":0.5,"counts":{"id_switches":3},"pr_curve":[[1.0,0.0,0.9],[0.5,1.0,0.1]]}},
    "refined":{"vehicle":{"detection":{"ap":null,"aph":null},"mota":-0.5,"motp":0.0,
      "recall_at_track":0.0,"counts":{"id_switches":0}}}}]})";
  const std::string table = render_report(dir / "report.json", dir / "plots");
  const std::string golden =
      "sequence              output   class            AP     APH    MOTA    MOTP   R@track   IDSW\n"
      "s0                    tracked  vehicle      0.5000  0.2500  0.7500  0.1250    0.5000      3\n"
      "s0                    refined  vehicle           -       - -0.5000  0.0000    0.0000      0\n";
  EXPECT_EQ(table, golden);
  EXPECT_TRUE(fs::exists(dir / "plots" / "pr_s0_tracked_vehicle.svg"));
  EXPECT_FALSE(fs::exists(dir / "plots" / "pr_s0_refined_vehicle.svg"));
  fs::remove_all(dir);
}

TEST(Hashing, KnownDigestAndDirectoryOrder) {
  EXPECT_EQ(sha256_string("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const fs::path dir = fs::temp_directory_path() / "offtrack_hash";
  fs::remove_all(dir);
  fs::create_directories(dir / "sub");
  std::ofstream(dir / "b.txt") << "1";
  std::ofstream(dir / "sub" / "a.txt") << "2";
  const std::string h = sha256_path(dir);
  std::ofstream(dir / "sub" / "a.txt") << "3";
  EXPECT_NE(sha256_path(dir), h);
  fs::remove_all(dir);
}
