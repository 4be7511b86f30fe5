#pragma once

// Stage graph: synth -> track -> prepare -> train -> refine -> eval.
//
// Work directory layout:
//   manifest.jsonl            one record per executed or failed stage
//   sequences/<id>/           synthetic sequences (when no input dirs are given)
//   train/<id>/               synthetic training sequences
//   models/                   checkpoints and train_log.json
//   out/<id>/                 tracks_forward.jsonl, tracks_reverse.jsonl, tracks.jsonl,
//                             prepared.jsonl, refined_tracks.jsonl, labels.jsonl, report.json
//   report.json               all sequences

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "offtrack/config.hpp"
#include "offtrack/eval.hpp"
#include "offtrack/ingest.hpp"
#include "offtrack/objprep.hpp"
#include "offtrack/parallel.hpp"
#include "offtrack/refine/refiner.hpp"
#include "offtrack/refine/train.hpp"
#include "offtrack/synth.hpp"
#include "offtrack/tracker.hpp"

namespace offtrack {

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw Error("sha256: init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update(const std::string& s) { update(s.data(), s.size()); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_string(const std::string& s) {
  Sha256 h;
  h.update(s);
  return h.hex();
}

inline void hash_file_into(Sha256& h, const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestError("cannot read " + p.string());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
}

/// Files hash their bytes; directories hash sorted relative paths and contents.
inline std::string sha256_path(const fs::path& p) {
  Sha256 h;
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), p));
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      h.update(f.generic_string());
      h.update("\n", 1);
      hash_file_into(h, p / f);
    }
  } else {
    hash_file_into(h, p);
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainPlan {
  bool enabled = true;
  std::vector<fs::path> inputs;  // sequences with gt; empty -> synthetic scenes
  int scenes = 4;
  std::size_t objects = 20;
  std::size_t clutter = 12;
  double clutter_fp_rate = 0.5;
  std::size_t min_tracks = 4;  // per class, below this no model is trained
  ModelWidths widths{128, 256, 256, nn::kHeadCount, true};
  int grm_epochs = 14;
  int prm_epochs = 26;
  int crm_epochs = 10;
  int batch = 16;
  double lr = 2e-3;
  GeometrySetOptions geometry{3, 64, 384, false};
  PositionSetOptions position{48, 32, 256, false};
  int crop_frames = 48;
};

struct PipelineConfig {
  fs::path work = "work";
  std::vector<fs::path> inputs;  // existing sequence dirs; empty -> synth stage
  fs::path checkpoints;          // empty -> <work>/models
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> synth_seed, train_seed, refine_seed;
  int jobs = 0;
  ClassThresholds thresholds;

  int synth_sequences = 1;
  std::optional<Config> scenario;  // parsed scenario file; none -> benchmark layout
  std::size_t synth_objects = 20;

  TrainPlan train;
  RefineOptions refine;
  EvalOptions eval;

  std::uint64_t seed_for_synth() const { return synth_seed.value_or(seed); }
  std::uint64_t seed_for_train() const { return train_seed.value_or(mix_seed(seed, 1)); }
  std::uint64_t seed_for_refine() const { return refine_seed.value_or(mix_seed(seed, 2)); }
  fs::path model_dir() const { return checkpoints.empty() ? work / "models" : checkpoints; }
};

namespace detail {

inline fs::path resolve_against(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

inline std::optional<std::uint64_t> get_seed(const ConfigTable& t, const std::string& key) {
  if (!t.contains(key)) return std::nullopt;
  const std::int64_t v = t.get_int(key, 0);
  if (v < 0) throw ConfigError("seed '" + key + "' must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

}  // namespace detail

/// Reads a pipeline config; relative paths resolve against `base_dir`
/// (the config file's directory).
inline PipelineConfig pipeline_from_config(const Config& cfg, const fs::path& base_dir = {}) {
  PipelineConfig p;
  const auto& paths = cfg.table("paths");
  p.work = detail::resolve_against(base_dir, paths.get_string("work", "work"));
  for (const auto& s : paths.get_strings("input", {}))
    p.inputs.push_back(detail::resolve_against(base_dir, s));
  p.checkpoints = detail::resolve_against(base_dir, paths.get_string("checkpoints", ""));

  const auto& seeds = cfg.table("seeds");
  if (auto s = detail::get_seed(seeds, "seed")) p.seed = *s;
  p.synth_seed = detail::get_seed(seeds, "synth");
  p.train_seed = detail::get_seed(seeds, "train");
  p.refine_seed = detail::get_seed(seeds, "refine");
  p.jobs = static_cast<int>(cfg.table("run").get_int("jobs", 0));
  if (p.jobs < 0) throw ConfigError("jobs must be >= 0");
  p.thresholds = thresholds_from_config(cfg);

  const auto& sy = cfg.table("synth");
  p.synth_sequences = static_cast<int>(sy.get_int("sequences", 1));
  if (p.synth_sequences < 1) throw ConfigError("synth.sequences must be >= 1");
  p.synth_objects = static_cast<std::size_t>(sy.get_int("objects", 20));
  if (const std::string sc = sy.get_string("scenario", ""); !sc.empty())
    p.scenario = load_config_file(detail::resolve_against(base_dir, sc).string());

  const auto& tr = cfg.table("train");
  TrainPlan& t = p.train;
  t.enabled = tr.get_bool("enabled", t.enabled);
  for (const auto& s : tr.get_strings("input", {})) t.inputs.push_back(detail::resolve_against(base_dir, s));
  t.scenes = static_cast<int>(tr.get_int("scenes", t.scenes));
  t.objects = static_cast<std::size_t>(tr.get_int("objects", static_cast<std::int64_t>(t.objects)));
  t.clutter = static_cast<std::size_t>(tr.get_int("clutter", static_cast<std::int64_t>(t.clutter)));
  t.clutter_fp_rate = tr.get_double("clutter_fp_rate", t.clutter_fp_rate);
  t.min_tracks = static_cast<std::size_t>(tr.get_int("min_tracks", static_cast<std::int64_t>(t.min_tracks)));
  t.widths.hidden = tr.get_int("hidden", t.widths.hidden);
  t.widths.feature = tr.get_int("feature", t.widths.feature);
  t.widths.value_point = tr.get_int("value_point", t.widths.value_point);
  t.widths.heads = static_cast<int>(tr.get_int("heads", t.widths.heads));
  t.widths.scaled = tr.get_bool("scaled_attention", t.widths.scaled);
  t.grm_epochs = static_cast<int>(tr.get_int("grm_epochs", t.grm_epochs));
  t.prm_epochs = static_cast<int>(tr.get_int("prm_epochs", t.prm_epochs));
  t.crm_epochs = static_cast<int>(tr.get_int("crm_epochs", t.crm_epochs));
  t.batch = static_cast<int>(tr.get_int("batch", t.batch));
  t.lr = tr.get_double("lr", t.lr);
  t.geometry.queries = static_cast<int>(tr.get_int("queries", t.geometry.queries));
  t.geometry.points_per_query = static_cast<int>(tr.get_int("points_per_query", t.geometry.points_per_query));
  t.geometry.value_points = static_cast<int>(tr.get_int("geometry_value_points", t.geometry.value_points));
  t.position.points_per_frame = static_cast<int>(tr.get_int("points_per_frame", t.position.points_per_frame));
  t.position.value_points = static_cast<int>(tr.get_int("position_value_points", t.position.value_points));
  t.crop_frames = static_cast<int>(tr.get_int("crop_frames", t.crop_frames));
  if (t.scenes < 0 || t.batch < 1 || t.grm_epochs < 0 || t.prm_epochs < 0 || t.crm_epochs < 0 ||
      t.crop_frames < 2 || t.widths.hidden < 1 || t.widths.feature < 1 || t.widths.value_point < 1 ||
      t.widths.heads < 1 || t.widths.feature % t.widths.heads != 0)
    throw ConfigError("invalid [train] settings");

  const auto& rf = cfg.table("refine");
  p.refine.alpha = rf.get_double("roi_scale", p.refine.alpha);
  p.refine.normalize_score = rf.get_bool("normalize_score", p.refine.normalize_score);
  p.refine.geometry = t.geometry;
  p.refine.geometry.inference = true;
  p.refine.position = t.position;
  p.refine.position.inference = true;
  p.refine.crop_frames = t.crop_frames;

  const auto& ev = cfg.table("eval");
  for (ClassId c : kAllClasses)
    p.eval.iou_thr[c] = ev.get_double("iou_" + std::string(class_name(c)), p.eval.iou_thr[c]);
  p.eval.pr_thresholds = ev.get_doubles("pr_thresholds", p.eval.pr_thresholds);
  p.eval.completeness = ev.get_double("completeness", p.eval.completeness);
  p.eval.easy_min_points = static_cast<int>(ev.get_int("easy_min_points", p.eval.easy_min_points));
  return p;
}

inline PipelineConfig load_pipeline_config(const std::string& cli_path) {
  const std::string path = resolve_config_path(cli_path);
  if (path.empty()) return {};
  return pipeline_from_config(load_config_file(path), fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

using HashMap = std::map<std::string, std::string>;

struct StageRecord {
  std::string stage;
  std::string key;
  HashMap inputs;
  HashMap outputs;
  std::string status;  // "ok" | "failed"
  std::string message;
};

inline Json record_to_json(const StageRecord& r) {
  Json j;
  j["stage"] = r.stage;
  j["key"] = r.key;
  j["inputs"] = r.inputs;
  j["outputs"] = r.outputs;
  j["status"] = r.status;
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

inline StageRecord record_from_json(const Json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.key = j.at("key").get<std::string>();
  r.inputs = j.at("inputs").get<HashMap>();
  r.outputs = j.at("outputs").get<HashMap>();
  r.status = j.at("status").get<std::string>();
  if (j.contains("message")) r.message = j["message"].get<std::string>();
  return r;
}

/// Append-only; writes are serialized.
class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) return;
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) records_.push_back(record_from_json(Json::parse(line)));
  }

  void append(const StageRecord& r) {
    std::lock_guard lock(mu_);
    records_.push_back(r);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << record_to_json(r).dump() << '\n';
  }

  std::optional<StageRecord> last(const std::string& stage, const std::string& key) const {
    std::lock_guard lock(mu_);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->stage == stage && it->key == key) return *it;
    return std::nullopt;
  }

  std::vector<StageRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

 private:
  fs::path path_;
  mutable std::mutex mu_;
  std::vector<StageRecord> records_;
};

// ---------------------------------------------------------------------------
// Context
// ---------------------------------------------------------------------------

class StageFailure : public Error {
 public:
  using Error::Error;
};

struct PipelineContext {
  PipelineConfig cfg;
  Manifest manifest;
  std::ostream* log = &std::cerr;
  std::mutex log_mu;
  std::size_t executed = 0, skipped = 0;

  explicit PipelineContext(PipelineConfig c)
      : cfg(std::move(c)), manifest((fs::create_directories(cfg.work), cfg.work / "manifest.jsonl")) {}

  void note(const std::string& stage, const std::string& key, const std::string& msg) {
    std::lock_guard lock(log_mu);
    if (log != nullptr) *log << "[" << stage << "] " << key << ": " << msg << '\n';
  }
};

/// Runs `body` unless the last successful record for (stage, key) has the
/// same input hashes and every recorded output still hashes the same.
/// `inputs` maps a label to a file or directory; `params` is hashed as an
/// extra input. `body` returns the output paths.
inline bool run_stage(PipelineContext& ctx, const std::string& stage, const std::string& key,
                      const std::map<std::string, fs::path>& inputs, const Json& params,
                      const std::function<std::vector<fs::path>()>& body) {
  StageRecord rec;
  rec.stage = stage;
  rec.key = key;
  for (const auto& [label, path] : inputs) {
    if (!fs::exists(path))
      throw StageFailure(stage + " " + key + ": missing input " + path.string());
    rec.inputs[label] = sha256_path(path);
  }
  rec.inputs["params"] = sha256_string(params.dump());

  if (auto prev = ctx.manifest.last(stage, key); prev && prev->status == "ok" && prev->inputs == rec.inputs) {
    bool intact = !prev->outputs.empty();
    for (const auto& [path, hash] : prev->outputs)
      if (!fs::exists(path) || sha256_path(path) != hash) intact = false;
    if (intact) {
      ctx.note(stage, key, "unchanged, skipped");
      std::lock_guard lock(ctx.log_mu);
      ++ctx.skipped;
      return false;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (const auto& out : body()) rec.outputs[out.string()] = sha256_path(out);
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.message = e.what();
    ctx.manifest.append(rec);
    throw StageFailure(stage + " " + key + ": " + e.what());
  }
  rec.status = "ok";
  ctx.manifest.append(rec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.note(stage, key, "done in " + format_number(secs, 2) + " s");
  std::lock_guard lock(ctx.log_mu);
  ++ctx.executed;
  return true;
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

struct SequenceRef {
  std::string id;
  fs::path dir;
  std::optional<ScenarioConfig> scenario;  // set for synthetic sequences
};

inline ScenarioConfig synth_scenario(const PipelineConfig& cfg, int index) {
  const std::uint64_t seed = cfg.seed_for_synth() + static_cast<std::uint64_t>(index);
  ScenarioConfig c;
  if (cfg.scenario) {
    Config sc = *cfg.scenario;
    sc.mutable_table("").set("seed", static_cast<std::int64_t>(seed));
    c = scenario_from_config(sc);
  } else {
    c = benchmark_scenario(seed, cfg.synth_objects);
  }
  if (cfg.synth_sequences > 1) c.sequence_id += "_" + std::to_string(index);
  return c;
}

inline std::string sequence_id_of(const fs::path& dir) {
  // frames.jsonl rows carry no id; the directory name is the id.
  return dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
}

inline std::vector<SequenceRef> sequences(const PipelineConfig& cfg) {
  std::vector<SequenceRef> out;
  if (!cfg.inputs.empty()) {
    for (const auto& d : cfg.inputs) out.push_back({sequence_id_of(d), d, std::nullopt});
    return out;
  }
  for (int i = 0; i < cfg.synth_sequences; ++i) {
    ScenarioConfig c = synth_scenario(cfg, i);
    out.push_back({c.sequence_id, cfg.work / "sequences" / c.sequence_id, c});
  }
  return out;
}

inline fs::path out_dir(const PipelineConfig& cfg, const SequenceRef& s) { return cfg.work / "out" / s.id; }

inline Json scenario_params(const ScenarioConfig& c) {
  // Hash key for a generated sequence: everything that shapes its bytes.
  std::ostringstream os;
  os.precision(17);
  os << c.sequence_id << ' ' << c.seed << ' ' << c.frame_count << ' ' << c.frame_period_us << ' '
     << c.points_per_m2_at_10m << ' ' << c.point_noise_sigma << ' ' << c.clutter_noise_sigma << ' '
     << c.intensity << ' ' << c.elongation << ' ' << c.occlusion << ' ' << c.center_sigma << ' '
     << c.center_sigma_z << ' ' << c.size_sigma << ' ' << c.yaw_sigma << ' ' << c.fn_rate << ' '
     << c.fp_per_frame << ' ' << c.fp_score_max << ' ' << c.clutter_fp_rate << ' '
     << c.clutter_score_scale << ' ' << c.score_a << ' ' << c.score_b;
  for (double e : c.extent) os << ' ' << e;
  os << " | " << c.sensor.x << ' ' << c.sensor.y << ' ' << c.sensor.z << ' ' << c.sensor.yaw << ' '
     << c.sensor.speed << ' ' << c.sensor.yaw_rate;
  for (const auto& o : c.objects)
    os << " | " << class_name(o.cls) << ' ' << o.size[0] << ' ' << o.size[1] << ' ' << o.size[2] << ' '
       << static_cast<int>(o.motion) << ' ' << o.x << ' ' << o.y << ' ' << o.yaw << ' ' << o.speed << ' '
       << o.radius << ' ' << o.angular_rate << ' ' << o.first_frame << ' ' << o.last_frame;
  for (const auto& k : c.clutter)
    os << " | c " << k.size[0] << ' ' << k.size[1] << ' ' << k.size[2] << ' ' << k.x << ' ' << k.y << ' ' << k.yaw;
  return Json(os.str());
}

inline Json thresholds_params(const ClassThresholds& t) {
  Json j;
  for (ClassId c : kAllClasses) {
    j[std::string(class_name(c))] = {t.overlap_filter[c], t.stage1_iou[c],     t.stage2_iou[c],
                                     t.merge_overlap[c],  t.high_min_score[c], t.high_min_points[c],
                                     t.min_refinable_length[c]};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void stage_synth(PipelineContext& ctx) {
  const auto seqs = sequences(ctx.cfg);
  if (!ctx.cfg.inputs.empty()) {
    ctx.note("synth", "*", "input sequences given, nothing to generate");
    return;
  }
  parallel_for(seqs.size(), ctx.cfg.jobs, [&](int, std::size_t i) {
    const SequenceRef& s = seqs[i];
    run_stage(ctx, "synth", s.id, {}, scenario_params(*s.scenario), [&] {
      fs::remove_all(s.dir);
      save_sequence(generate(*s.scenario), s.dir);
      return std::vector<fs::path>{s.dir};
    });
  });
}

inline void stage_track(PipelineContext& ctx) {
  const auto seqs = sequences(ctx.cfg);
  parallel_for(seqs.size(), ctx.cfg.jobs, [&](int, std::size_t i) {
    const SequenceRef& s = seqs[i];
    const fs::path out = out_dir(ctx.cfg, s);
    run_stage(ctx, "track", s.id, {{"sequence", s.dir}}, thresholds_params(ctx.cfg.thresholds), [&] {
      const SequenceBundle b = load_sequence(s.dir);
      const FrameDetections filtered = overlap_filter(b.detections, ctx.cfg.thresholds);
      const auto fwd = run_tracker(filtered, ctx.cfg.thresholds, Direction::kForward);
      const auto rev = run_tracker(filtered, ctx.cfg.thresholds, Direction::kReverse);
      const auto fused = fuse_forward_reverse(fwd, rev);
      fs::create_directories(out);
      save_tracks(out / "tracks_forward.jsonl", fwd);
      save_tracks(out / "tracks_reverse.jsonl", rev);
      save_tracks(out / "tracks.jsonl", fused);
      ctx.note("track", s.id, std::to_string(fused.size()) + " tracks");
      return std::vector<fs::path>{out / "tracks_forward.jsonl", out / "tracks_reverse.jsonl",
                                   out / "tracks.jsonl"};
    });
  });
}

/// One row per track: route and per-entry point counts inside the scaled box.
inline void stage_prepare(PipelineContext& ctx) {
  const auto seqs = sequences(ctx.cfg);
  parallel_for(seqs.size(), ctx.cfg.jobs, [&](int, std::size_t i) {
    const SequenceRef& s = seqs[i];
    const fs::path out = out_dir(ctx.cfg, s);
    Json params = thresholds_params(ctx.cfg.thresholds);
    params["roi_scale"] = ctx.cfg.refine.alpha;
    run_stage(ctx, "prepare", s.id, {{"sequence", s.dir}, {"tracks", out / "tracks.jsonl"}}, params, [&] {
      const SequenceBundle b = load_sequence(s.dir);
      const WorldFrames world = to_world_frames(b.frames);
      const auto tracks = load_tracks(out / "tracks.jsonl");
      std::vector<Json> rows;
      std::size_t refinable = 0;
      for (const auto& t : tracks) {
        const ObjectSample sample = extract_object_points(t, world, ctx.cfg.refine.alpha);
        const bool refine = static_cast<int>(t.updated_count()) >= ctx.cfg.thresholds.min_refinable_length[t.cls];
        refinable += refine ? 1 : 0;
        Json j;
        j["track_id"] = t.track_id;
        j["class"] = std::string(class_name(t.cls));
        j["route"] = refine ? "refine" : "passthrough";
        j["frames"] = sample.frame_indices;
        std::vector<std::size_t> counts;
        for (const auto& f : sample.per_frame_points) counts.push_back(f.size());
        j["points"] = counts;
        rows.push_back(std::move(j));
      }
      write_lines(out / "prepared.jsonl", rows);
      ctx.note("prepare", s.id, std::to_string(refinable) + " of " + std::to_string(tracks.size()) + " tracks routed to refinement");
      return std::vector<fs::path>{out / "prepared.jsonl"};
    });
  });
}

inline std::map<std::int64_t, bool> load_routes(const fs::path& prepared) {
  std::map<std::int64_t, bool> r;
  for_each_jsonl(prepared, [&](const Json& j, std::size_t) {
    r[j.at("track_id").get<std::int64_t>()] = j.at("route").get<std::string>() == "refine";
  });
  return r;
}

// -- training ---------------------------------------------------------------

struct TrainingSet {
  std::vector<SequenceBundle> bundles;
  std::vector<WorldFrames> worlds;
  std::vector<CorpusTrack> corpus;
  std::vector<std::size_t> scene_of;  // corpus index -> bundle index
};

inline ScenarioConfig training_scenario(const TrainPlan& plan, std::uint64_t seed, int index) {
  const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(index));
  ScenarioConfig c;
  c.sequence_id = "train_" + std::to_string(index);
  c.seed = s;
  c.sensor.speed = 3.0;
  LayoutOptions lo;
  lo.objects = plan.objects;
  lo.clutter = plan.clutter;
  add_lane_layout(c, lo, s ^ 0x5eedULL);
  c.clutter_fp_rate = plan.clutter_fp_rate;
  return c;
}

inline Json train_params(const PipelineConfig& cfg) {
  const TrainPlan& t = cfg.train;
  Json j;
  j["seed"] = cfg.seed_for_train();
  j["scenes"] = t.scenes;
  j["objects"] = t.objects;
  j["clutter"] = t.clutter;
  j["clutter_fp_rate"] = t.clutter_fp_rate;
  j["min_tracks"] = t.min_tracks;
  j["widths"] = t.widths.tag();
  j["epochs"] = {t.grm_epochs, t.prm_epochs, t.crm_epochs};
  j["batch"] = t.batch;
  j["lr"] = t.lr;
  j["geometry"] = {t.geometry.queries, t.geometry.points_per_query, t.geometry.value_points};
  j["position"] = {t.position.points_per_frame, t.position.value_points};
  j["crop_frames"] = t.crop_frames;
  j["thresholds"] = thresholds_params(cfg.thresholds);
  j["roi_scale"] = cfg.refine.alpha;
  return j;
}

inline Json train_result_json(const std::string& arch, const TrainResult& r, std::size_t items) {
  Json j;
  j["arch"] = arch;
  j["items"] = items;
  j["initial_loss"] = r.initial_loss;
  j["epoch_loss"] = r.epoch_loss;
  j["steps"] = r.steps;
  j["aborted"] = r.aborted;
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

inline TrainOptions train_options(const PipelineConfig& cfg, int epochs, std::uint64_t salt) {
  const TrainPlan& t = cfg.train;
  TrainOptions o;
  o.epochs = epochs;
  o.batch = t.batch;
  o.lr = t.lr;
  o.seed = mix_seed(cfg.seed_for_train(), salt);
  o.widths = t.widths;
  o.geometry = t.geometry;
  o.geometry.inference = false;
  o.position = t.position;
  o.position.inference = false;
  o.crop_frames = t.crop_frames;
  return o;
}

/// Trains GRM and PRM per class (independent tasks, run on `jobs`
/// threads), then CRM per class on boxes refined by the new GRM / PRM.
inline Json train_models(const PipelineConfig& cfg, const TrainingSet& ts, const fs::path& dir,
                         const std::function<void(const std::string&)>& note) {
  fs::create_directories(dir);
  for (ClassId c : kAllClasses)
    for (const char* kind : {"grm", "prm", "crm"}) fs::remove(model_path(dir, kind, c));

  std::vector<ClassId> classes;
  for (ClassId c : kAllClasses) {
    const std::size_t n = supervised_tracks(ts.corpus, c).size();
    if (n >= cfg.train.min_tracks) {
      classes.push_back(c);
    } else if (n > 0) {
      note(std::string(class_name(c)) + ": " + std::to_string(n) + " supervised tracks, below min_tracks; no model");
    }
  }

  struct Task {
    ClassId cls;
    int kind;  // 0 grm, 1 prm
  };
  std::vector<Task> tasks;
  for (ClassId c : classes) {
    tasks.push_back({c, 0});
    tasks.push_back({c, 1});
  }
  std::vector<Json> logs(tasks.size());
  RefinerModels trained;
  std::mutex mu;
  parallel_for(tasks.size(), cfg.jobs, [&](int, std::size_t i) {
    const Task& t = tasks[i];
    const auto salt = static_cast<std::uint64_t>(class_index(t.cls) * 3 + t.kind);
    if (t.kind == 0) {
      GrmModel m(t.cls, kmeans_anchors(corpus_gt_sizes(ts.corpus, t.cls), 3), cfg.train.widths);
      m.init(mix_seed(cfg.seed_for_train(), 100 + salt));
      const auto r = train_grm(m, ts.corpus, train_options(cfg, cfg.train.grm_epochs, salt));
      save_model(m, model_path(dir, "grm", t.cls));
      logs[i] = train_result_json(m.arch(), r, supervised_tracks(ts.corpus, t.cls).size());
      std::lock_guard lock(mu);
      trained.grm[t.cls] = std::move(m);
    } else {
      PrmModel m(t.cls, cfg.train.widths);
      m.init(mix_seed(cfg.seed_for_train(), 100 + salt));
      const auto r = train_prm(m, ts.corpus, train_options(cfg, cfg.train.prm_epochs, salt));
      save_model(m, model_path(dir, "prm", t.cls));
      logs[i] = train_result_json(m.arch(), r, supervised_tracks(ts.corpus, t.cls).size());
      std::lock_guard lock(mu);
      trained.prm[t.cls] = std::move(m);
    }
    note(logs[i]["arch"].get<std::string>() + " trained");
  });
  for (ClassId c : kAllClasses) {
    if (trained.grm[c]) trained.grm[c]->set_training(false);
    if (trained.prm[c]) trained.prm[c]->set_training(false);
  }

  // CRM inputs: training tracks refined by the freshly trained models.
  RefineOptions ro = cfg.refine;
  ro.seed = cfg.seed_for_train();
  ro.normalize_score = false;
  std::vector<CrmExample> examples(ts.corpus.size());
  std::vector<RefinerModels> copies(static_cast<std::size_t>(std::max(1, resolve_jobs(cfg.jobs))), trained);
  parallel_for(ts.corpus.size(), cfg.jobs, [&](int w, std::size_t i) {
    const CorpusTrack& c = ts.corpus[i];
    CrmExample& e = examples[i];
    e.track = &c;
    const RefineOutcome o = refine_track(c.track, ts.worlds[ts.scene_of[i]], copies[w], ro);
    for (const auto& en : o.track.entries) e.boxes.push_back(en.box);
    e.target.label = crm_label(c.mean_best_iou, c.track.cls);
    e.target.iou_target = crm_iou_target(c, e.boxes);
  });
  std::vector<Json> crm_logs(classes.size());
  parallel_for(classes.size(), cfg.jobs, [&](int, std::size_t i) {
    const ClassId c = classes[i];
    CrmModel m(c, cfg.train.widths);
    const auto salt = static_cast<std::uint64_t>(class_index(c) * 3 + 2);
    m.init(mix_seed(cfg.seed_for_train(), 100 + salt));
    std::size_t n = 0;
    for (const auto& e : examples) n += (e.track->track.cls == c && e.track->sample.total_points() > 0) ? 1 : 0;
    const auto r = train_crm(m, examples, train_options(cfg, cfg.train.crm_epochs, salt));
    save_model(m, model_path(dir, "crm", c));
    crm_logs[i] = train_result_json(m.arch(), r, n);
    note(m.arch() + " trained");
  });

  Json log = Json::array();
  for (auto& j : logs) log.push_back(std::move(j));
  for (auto& j : crm_logs) log.push_back(std::move(j));
  return log;
}

inline TrainingSet build_training_set(PipelineContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  TrainingSet ts;
  std::vector<fs::path> dirs = cfg.train.inputs;
  if (dirs.empty()) {
    for (int i = 0; i < cfg.train.scenes; ++i) {
      const ScenarioConfig c = training_scenario(cfg.train, cfg.seed_for_train(), i);
      const fs::path d = cfg.work / "train" / c.sequence_id;
      fs::remove_all(d);
      save_sequence(generate(c), d);
      dirs.push_back(d);
    }
  }
  ts.bundles.resize(dirs.size());
  ts.worlds.resize(dirs.size());
  std::vector<std::vector<CorpusTrack>> per(dirs.size());
  parallel_for(dirs.size(), cfg.jobs, [&](int, std::size_t i) {
    ts.bundles[i] = load_sequence(dirs[i]);
    if (!ts.bundles[i].gt_tracks) throw IngestError("training sequence " + dirs[i].string() + " has no gt_tracks.jsonl");
    ts.worlds[i] = to_world_frames(ts.bundles[i].frames);
    per[i] = build_corpus(ts.bundles[i], track_sequence(ts.bundles[i], cfg.thresholds), ts.worlds[i],
                          CorpusOptions{cfg.refine.alpha, 0.3});
  });
  for (std::size_t i = 0; i < per.size(); ++i)
    for (auto& c : per[i]) {
      ts.corpus.push_back(std::move(c));
      ts.scene_of.push_back(i);
    }
  return ts;
}

inline void stage_train(PipelineContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  if (!cfg.train.enabled) {
    ctx.note("train", "*", "disabled; refine uses checkpoints in " + cfg.model_dir().string());
    return;
  }
  std::map<std::string, fs::path> inputs;
  for (std::size_t i = 0; i < cfg.train.inputs.size(); ++i)
    inputs["train_input_" + std::to_string(i)] = cfg.train.inputs[i];
  const fs::path dir = cfg.model_dir();
  run_stage(ctx, "train", "models", inputs, train_params(cfg), [&] {
    TrainingSet ts = build_training_set(ctx);
    ctx.note("train", "models", std::to_string(ts.corpus.size()) + " corpus tracks from " +
                                    std::to_string(ts.bundles.size()) + " sequences");
    const Json log = train_models(cfg, ts, dir, [&](const std::string& m) { ctx.note("train", "models", m); });
    std::ofstream(dir / "train_log.json", std::ios::binary) << log.dump(2) << '\n';
    std::vector<fs::path> outs{dir / "train_log.json"};
    for (ClassId c : kAllClasses)
      for (const char* kind : {"grm", "prm", "crm"})
        if (fs::exists(model_path(dir, kind, c))) outs.push_back(model_path(dir, kind, c));
    return outs;
  });
}

inline std::map<std::string, fs::path> checkpoint_inputs(const fs::path& dir) {
  std::map<std::string, fs::path> m;
  for (ClassId c : kAllClasses)
    for (const char* kind : {"grm", "prm", "crm"})
      if (const auto p = model_path(dir, kind, c); fs::exists(p)) m[p.filename().string()] = p;
  return m;
}

inline void stage_refine(PipelineContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  const auto seqs = sequences(cfg);
  const fs::path mdir = cfg.model_dir();
  const RefinerModels models = load_models(mdir);
  if (models.empty()) ctx.note("refine", "*", "no checkpoints in " + mdir.string() + "; tracks pass through");
  RefineOptions ro = cfg.refine;
  ro.seed = cfg.seed_for_refine();
  Json params;
  params["seed"] = ro.seed;
  params["roi_scale"] = ro.alpha;
  params["normalize_score"] = ro.normalize_score;
  params["geometry"] = {ro.geometry.queries, ro.geometry.points_per_query, ro.geometry.value_points};
  params["position"] = {ro.position.points_per_frame, ro.position.value_points};
  params["crop_frames"] = ro.crop_frames;
  // Sequences run one at a time; tracks inside a sequence use all jobs.
  for (const SequenceRef& s : seqs) {
    const fs::path out = out_dir(cfg, s);
    auto inputs = checkpoint_inputs(mdir);
    inputs["sequence"] = s.dir;
    inputs["tracks"] = out / "tracks.jsonl";
    inputs["prepared"] = out / "prepared.jsonl";
    run_stage(ctx, "refine", s.id, inputs, params, [&] {
      const SequenceBundle b = load_sequence(s.dir);
      const WorldFrames world = to_world_frames(b.frames);
      const auto tracks = load_tracks(out / "tracks.jsonl");
      const auto routes = load_routes(out / "prepared.jsonl");
      std::vector<Track> refinable, result;
      std::vector<std::size_t> slot;
      result.resize(tracks.size());
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        auto it = routes.find(tracks[i].track_id);
        if (it == routes.end()) throw StructureError("track " + std::to_string(tracks[i].track_id) + " missing from prepared.jsonl");
        if (it->second) {
          refinable.push_back(tracks[i]);
          slot.push_back(i);
        } else {
          result[i] = tracks[i];
        }
      }
      const auto outcomes = refine_tracks(refinable, world, models, ro, cfg.jobs);
      std::size_t refined = 0;
      for (std::size_t k = 0; k < outcomes.size(); ++k) {
        result[slot[k]] = outcomes[k].track;
        refined += outcomes[k].refined ? 1 : 0;
      }
      save_tracks(out / "refined_tracks.jsonl", result);
      write_lines(out / "labels.jsonl", label_rows(result, b.frames));
      ctx.note("refine", s.id, std::to_string(refined) + " of " + std::to_string(tracks.size()) + " tracks refined");
      return std::vector<fs::path>{out / "refined_tracks.jsonl", out / "labels.jsonl"};
    });
  }
}

inline Json eval_params(const EvalOptions& e) {
  Json j;
  for (ClassId c : kAllClasses) j["iou_" + std::string(class_name(c))] = e.iou_thr[c];
  j["pr_thresholds"] = e.pr_thresholds;
  j["completeness"] = e.completeness;
  j["easy_min_points"] = e.easy_min_points;
  return j;
}

/// Per sequence: the tracker output and the refined output, both against gt.
inline void stage_eval(PipelineContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  const auto seqs = sequences(cfg);
  parallel_for(seqs.size(), cfg.jobs, [&](int, std::size_t i) {
    const SequenceRef& s = seqs[i];
    const fs::path out = out_dir(cfg, s);
    run_stage(ctx, "eval", s.id,
              {{"sequence", s.dir}, {"tracks", out / "tracks.jsonl"}, {"refined", out / "refined_tracks.jsonl"}},
              eval_params(cfg.eval), [&] {
                const SequenceBundle b = load_sequence(s.dir);
                if (!b.gt_tracks) throw IngestError("sequence " + s.id + " has no gt_tracks.jsonl to evaluate against");
                Json j;
                j["sequence_id"] = s.id;
                for (const auto& [name, file] : {std::pair{"tracked", "tracks.jsonl"}, std::pair{"refined", "refined_tracks.jsonl"}}) {
                  EvalReport r = evaluate(load_tracks(out / file), *b.gt_tracks, cfg.eval, &b.frames);
                  r.sequence_id = s.id;
                  j[name] = report_to_json(r)["classes"];
                }
                std::ofstream(out / "report.json", std::ios::binary) << j.dump(2) << '\n';
                return std::vector<fs::path>{out / "report.json"};
              });
  });
  // Aggregate is cheap and always rewritten from the per-sequence reports.
  Json all;
  all["sequences"] = Json::array();
  for (const auto& s : seqs) {
    std::ifstream in(out_dir(cfg, s) / "report.json");
    all["sequences"].push_back(Json::parse(in));
  }
  std::ofstream(cfg.work / "report.json", std::ios::binary) << all.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> kNames{"synth", "track", "prepare", "train", "refine", "eval"};
  return kNames;
}

inline void run_named_stage(PipelineContext& ctx, const std::string& name) {
  if (name == "synth") return stage_synth(ctx);
  if (name == "track") return stage_track(ctx);
  if (name == "prepare") return stage_prepare(ctx);
  if (name == "train") return stage_train(ctx);
  if (name == "refine") return stage_refine(ctx);
  if (name == "eval") return stage_eval(ctx);
  throw ConfigError("unknown stage '" + name + "'");
}

/// Runs every stage in order, stopping after `last` when given. Eval is
/// skipped (with a note) when a sequence has no gt.
inline void run_pipeline(PipelineContext& ctx, const std::string& last = {}) {
  if (!last.empty() && std::find(stage_names().begin(), stage_names().end(), last) == stage_names().end())
    throw ConfigError("unknown stage '" + last + "'");
  for (const auto& name : stage_names()) {
    if (name == "eval") {
      bool has_gt = true;
      for (const auto& s : sequences(ctx.cfg)) has_gt = has_gt && fs::exists(s.dir / "gt_tracks.jsonl");
      if (!has_gt) {
        ctx.note("eval", "*", "no gt_tracks.jsonl; evaluation skipped");
        break;
      }
    }
    run_named_stage(ctx, name);
    if (name == last) break;
  }
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline std::string render_ap(const Json& ap) {
  return ap.is_null() ? "-" : format_number(ap.get<double>());
}

/// Plain-text table of a work-dir report.json plus one PR-curve SVG per
/// (sequence, output, class). Returns the table; SVGs go to `svg_dir`.
inline std::string render_report(const fs::path& report_path, const fs::path& svg_dir) {
  if (!fs::exists(report_path)) throw IngestError("report not found: " + report_path.string());
  std::ifstream in(report_path);
  const Json all = Json::parse(in);
  std::ostringstream os;
  os << std::left << std::setw(22) << "sequence" << std::setw(9) << "output" << std::setw(11) << "class"
     << std::right << std::setw(8) << "AP" << std::setw(8) << "APH" << std::setw(8) << "MOTA" << std::setw(8)
     << "MOTP" << std::setw(10) << "R@track" << std::setw(7) << "IDSW" << '\n';
  fs::create_directories(svg_dir);
  for (const auto& seq : all.at("sequences")) {
    const std::string id = seq.at("sequence_id").get<std::string>();
    for (const char* output : {"tracked", "refined"}) {
      if (!seq.contains(output)) continue;
      for (const auto& [cls, c] : seq.at(output).items()) {
        const auto& det = c.at("detection");
        os << std::left << std::setw(22) << id << std::setw(9) << output << std::setw(11) << cls << std::right
           << std::setw(8) << render_ap(det.at("ap")) << std::setw(8) << render_ap(det.at("aph")) << std::setw(8)
           << format_number(c.at("mota").get<double>()) << std::setw(8) << format_number(c.at("motp").get<double>())
           << std::setw(10) << format_number(c.at("recall_at_track").get<double>()) << std::setw(7)
           << c.at("counts").at("id_switches").get<std::size_t>() << '\n';
        if (c.contains("pr_curve")) {
          std::vector<std::array<double, 3>> curve;
          for (const auto& p : c.at("pr_curve")) curve.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
          std::ofstream(svg_dir / ("pr_" + id + "_" + output + "_" + cls + ".svg"), std::ios::binary)
              << pr_curve_svg(curve, id + " " + output + " " + cls);
        }
      }
    }
  }
  return os.str();
}

}  // namespace offtrack
