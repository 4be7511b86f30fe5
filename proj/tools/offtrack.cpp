#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "offtrack/pipeline.hpp"

using namespace offtrack;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string work;
  std::string stage;
};

PipelineConfig build_config(const GlobalFlags& f) {
  PipelineConfig cfg = load_pipeline_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.jobs) {
    if (*f.jobs < 0) throw ConfigError("--jobs must be >= 0");
    cfg.jobs = *f.jobs;
  }
  if (!f.work.empty()) cfg.work = f.work;
  return cfg;
}

int report(const GlobalFlags& f, const std::string& dir_arg) {
  const fs::path dir = dir_arg.empty() ? build_config(f).work : fs::path(dir_arg);
  const std::string table = render_report(dir / "report.json", dir / "plots");
  std::ofstream(dir / "report.txt", std::ios::binary) << table;
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offtrack: offboard 3D auto-labeling on LiDAR sequences"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--config", flags.config, "pipeline config (TOML); defaults to $OFFTRACK_CONFIG");
  app.add_option("--seed", flags.seed, "master seed");
  app.add_option("--jobs", flags.jobs, "worker threads (0 = all cores)");
  app.add_option("--work", flags.work, "work directory (overrides [paths] work)");
  app.add_option("--stage", flags.stage, "with run: last stage to run")
      ->check(CLI::IsMember(stage_names()));

  std::string report_dir;
  for (const auto& name : stage_names()) {
    const char* help = name == "synth"     ? "generate synthetic sequences"
                       : name == "track"   ? "forward, reverse and fused tracking"
                       : name == "prepare" ? "route tracks and collect object points"
                       : name == "train"   ? "train the size, position and confidence refiners"
                       : name == "refine"  ? "refine tracks and write labels.jsonl"
                                           : "evaluate tracked and refined output against gt";
    app.add_subcommand(name, help);
  }
  app.add_subcommand("run", "run all stages (up to --stage)");
  auto* rep = app.add_subcommand("report", "render report.json as a table and PR-curve SVGs");
  rep->add_option("dir", report_dir, "work directory holding report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "report") return report(flags, report_dir);
    PipelineContext ctx(build_config(flags));
    if (cmd == "run") {
      run_pipeline(ctx, flags.stage);
    } else {
      run_named_stage(ctx, cmd);
    }
    std::cerr << "stages executed " << ctx.executed << ", skipped " << ctx.skipped << '\n';
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
