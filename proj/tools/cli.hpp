#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "playclass/playclass.hpp"

namespace playclass::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("PLAYCLASS_LOG");
  if (!v || !*v) return LogLevel::Info;
  const std::string s = lower(v);
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  throw UsageError("PLAYCLASS_LOG must be error, info or debug, got '" + std::string(v) + "'");
}

class Logger {
 public:
  Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void error(const std::string& m) const { emit(LogLevel::Error, "error", m); }
  void warn(const std::string& m) const { emit(LogLevel::Info, "warning", m); }
  void info(const std::string& m) const { emit(LogLevel::Info, "info", m); }
  void debug(const std::string& m) const { emit(LogLevel::Debug, "debug", m); }

 private:
  void emit(LogLevel l, const char* tag, const std::string& m) const {
    if (static_cast<int>(l) <= static_cast<int>(level_)) err_ << "[" << tag << "] " << m << "\n";
  }
  std::ostream& err_;
  LogLevel level_;
};

// ---------------------------------------------------------------------------
// Resolved configuration: every table a config file may carry. Flags
// override file values; run.json echoes the result.

struct DataPaths {
  std::string labels, manifest, features, embeddings, tracks;
  json to_json() const {
    return {{"labels", labels}, {"manifest", manifest}, {"features", features}, {"embeddings", embeddings}, {"tracks", tracks}};
  }
};

struct Settings {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out_dir = ".";
  DataPaths data;
  RunConfig run;
  std::vector<std::string> toggles;
  FeatureConfig features;
  PlannerConfig planner;
  TrackingEvalConfig trackeval;

  json to_json() const {
    auto r = run.to_json();
    return {{"seed", seed},
            {"jobs", jobs},
            {"out_dir", out_dir},
            {"data", data.to_json()},
            {"model", r["model"]},
            {"train", r["train"]},
            {"mlp_input", r["mlp_input"]},
            {"any_cage_count", r["any_cage_count"]},
            {"ablate", {{"toggles", toggles}}},
            {"features",
             {{"fps", features.fps},
              {"neighbour_radius", features.neighbour_radius},
              {"min_valid_frames", features.min_valid_frames},
              {"contour_epsilon", features.contour_epsilon}}},
            {"planner",
             {{"expected_birds", planner.expected_birds},
              {"d_ref", planner.d_ref},
              {"grounding_frames", planner.grounding_frames},
              {"chunk_len", planner.chunk_len},
              {"delta", planner.delta},
              {"tau_match", planner.tau_match}}},
            {"trackeval", {{"idf1_threshold", trackeval.idf1_threshold}}}};
  }
};

/// Paths inside a config file are relative to the file's directory.
inline std::string resolve_path(const fs::path& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

inline void apply_config_file(Settings& s, const fs::path& file) {
  const auto doc = load_toml(file);
  const auto base = file.parent_path();
  ConfigReader root(doc);
  s.seed = static_cast<std::uint64_t>(root.get<long long>("seed", static_cast<long long>(s.seed)));
  {
    auto d = root.table("data");
    s.data.labels = resolve_path(base, d.get<std::string>("labels", ""));
    s.data.manifest = resolve_path(base, d.get<std::string>("manifest", ""));
    s.data.features = resolve_path(base, d.get<std::string>("features", ""));
    s.data.embeddings = resolve_path(base, d.get<std::string>("embeddings", ""));
    s.data.tracks = resolve_path(base, d.get<std::string>("tracks", ""));
    s.run.any_cage_count = d.get<bool>("any_cage_count", s.run.any_cage_count);
    d.reject_unknown();
  }
  {
    auto m = root.table("model");
    auto& mc = s.run.model;
    if (m.has("variant")) mc.kind = parse_model_kind(m.get<std::string>("variant", ""));
    const auto input = m.get<std::string>("input", s.run.mlp_input == MlpInput::Features ? "features" : "embeddings");
    if (input != "features" && input != "embeddings") throw UsageError("config: model.input must be features or embeddings");
    s.run.mlp_input = input == "features" ? MlpInput::Features : MlpInput::Embeddings;
    mc.segments = m.get<int>("K", mc.segments);
    mc.bottleneck = m.get<int>("bottleneck", mc.bottleneck);
    mc.conv_channels = m.get<int>("conv_channels", mc.conv_channels);
    mc.kernel = m.get<int>("kernel", mc.kernel);
    mc.attention_dim = m.get<int>("attention_dim", mc.attention_dim);
    mc.mlp_hidden = m.get<int>("mlp_hidden", mc.mlp_hidden);
    m.reject_unknown();
  }
  {
    auto t = root.table("train");
    auto& tc = s.run.train;
    tc.epochs = t.get<int>("epochs", tc.epochs);
    tc.batch_size = t.get<int>("batch_size", tc.batch_size);
    tc.optimizer.lr = t.get<double>("lr", tc.optimizer.lr);
    tc.optimizer.beta1 = t.get<double>("beta1", tc.optimizer.beta1);
    tc.optimizer.beta2 = t.get<double>("beta2", tc.optimizer.beta2);
    tc.optimizer.eps = t.get<double>("eps", tc.optimizer.eps);
    tc.optimizer.weight_decay = t.get<double>("weight_decay", tc.optimizer.weight_decay);
    tc.label_smoothing = t.get<double>("label_smoothing", tc.label_smoothing);
    const auto cw = t.get<std::string>("class_weights", tc.class_weights == ClassWeightMode::InvSqrt ? "inv_sqrt" : "none");
    if (cw != "inv_sqrt" && cw != "none") throw UsageError("config: train.class_weights must be inv_sqrt or none");
    tc.class_weights = cw == "inv_sqrt" ? ClassWeightMode::InvSqrt : ClassWeightMode::None;
    t.reject_unknown();
  }
  {
    auto a = root.table("ablate");
    s.toggles = a.get<std::vector<std::string>>("toggles", s.toggles);
    a.reject_unknown();
  }
  {
    auto f = root.table("features");
    s.features.fps = f.get<double>("fps", s.features.fps);
    s.features.neighbour_radius = f.get<double>("neighbour_radius", s.features.neighbour_radius);
    s.features.min_valid_frames = f.get<int>("min_valid_frames", s.features.min_valid_frames);
    s.features.contour_epsilon = f.get<double>("contour_epsilon", s.features.contour_epsilon);
    f.reject_unknown();
  }
  {
    auto p = root.table("planner");
    s.planner.expected_birds = p.get<int>("expected_birds", s.planner.expected_birds);
    s.planner.d_ref = p.get<double>("d_ref", s.planner.d_ref);
    s.planner.grounding_frames = p.get<int>("grounding_frames", s.planner.grounding_frames);
    s.planner.chunk_len = p.get<int>("chunk_len", s.planner.chunk_len);
    s.planner.delta = p.get<int>("delta", s.planner.delta);
    s.planner.tau_match = p.get<double>("tau_match", s.planner.tau_match);
    p.reject_unknown();
  }
  {
    auto t = root.table("trackeval");
    s.trackeval.idf1_threshold = t.get<double>("idf1_threshold", s.trackeval.idf1_threshold);
    t.reject_unknown();
  }
  root.reject_unknown();
}

// ---------------------------------------------------------------------------
// Helpers

inline void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

inline void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

inline json read_json(const fs::path& p) {
  const auto text = read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

/// The single video of a track file, or the one named by `wanted`.
inline std::string pick_video(const std::vector<TrackedMask>& tracks, const std::string& wanted) {
  std::set<std::string> ids;
  for (const auto& t : tracks) ids.insert(t.video_id);
  if (!wanted.empty()) {
    if (!ids.count(wanted)) throw ValidationError("video '" + wanted + "' has no records in the track file");
    return wanted;
  }
  if (ids.size() != 1)
    throw UsageError("track file holds " + std::to_string(ids.size()) + " videos; choose one with --video");
  return *ids.begin();
}

inline std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

struct LoadedData {
  DatasetManifest manifest;
  std::vector<LabelWindow> labels;
  std::optional<std::vector<WindowFeatureVector>> features;
  std::optional<EmbeddingBundle> embeddings;
  LocoDataset dataset;
};

inline LoadedData load_training_data(const Settings& s, const Logger& log) {
  require(s.data.labels, "--labels (or data.labels)");
  require(s.data.manifest, "--manifest (or data.manifest)");
  LoadedData d;
  d.manifest = load_manifest(s.data.manifest);
  d.labels = load_labels(s.data.labels);
  const auto kind = s.run.model.kind;
  const bool need_features = kind == ModelKind::Hybrid || (kind == ModelKind::Mlp && s.run.mlp_input == MlpInput::Features);
  const bool need_tokens = kind != ModelKind::Mlp || s.run.mlp_input == MlpInput::Embeddings;
  if (need_features) {
    require(s.data.features, "--features (or data.features)");
    d.features = load_features(s.data.features);
  }
  if (need_tokens) {
    require(s.data.embeddings, "--embeddings (or data.embeddings)");
    d.embeddings = load_embeddings(s.data.embeddings, &d.labels);
    for (const auto& w : d.embeddings->warnings) log.warn(w);
  }
  d.dataset = build_loco_dataset(d.manifest, d.labels, d.features ? &*d.features : nullptr,
                                 d.embeddings ? &*d.embeddings : nullptr);
  for (const auto& w : d.dataset.warnings) log.info(w);
  log.info("training windows: " + std::to_string(d.dataset.windows.size()));
  return d;
}

inline RunConfig resolved_run(const Settings& s) {
  RunConfig rc = s.run;
  rc.train.seed = s.seed;
  rc.jobs = s.jobs;
  rc.train.validate();
  return rc;
}

inline void write_run_outputs(const fs::path& dir, const RunReport& rep) {
  fs::create_directories(dir);
  write_json(dir / "report.json", run_report_json(rep));
  write_file_atomic(dir / "confusion.csv", confusion_csv(rep.eval.matrix));
  std::string log, preds = "window_key,fold,true,predicted\n";
  for (const auto& f : rep.folds) {
    log += run_log_jsonl(f.fit, {{"fold", f.spec.fold_id}});
    Model m(f.model);
    m.params() = f.params;
    save_checkpoint(dir / ("fold_" + std::to_string(f.spec.fold_id) + ".ckpt"), m,
                    {{"fold_id", f.spec.fold_id},
                     {"test_cage", f.spec.test_cage},
                     {"best_epoch", f.fit.best_epoch},
                     {"preprocessing", f.preprocessing}});
    for (const auto& p : f.predictions)
      preds += csv_field(p.key.str()) + "," + std::to_string(f.spec.fold_id) + "," + kClassNames[static_cast<std::size_t>(p.truth)] +
               "," + kClassNames[static_cast<std::size_t>(p.predicted)] + "\n";
  }
  write_file_atomic(dir / "run_log.jsonl", log);
  write_file_atomic(dir / "predictions.csv", preds);
}

inline std::string metrics_line(const EvalReport& e) {
  std::string s = "macro-F1 " + format_fixed(e.metrics.macro_f1, 4) + " (folds " + format_fixed(e.fold_mean, 4) + " +- " +
                  format_fixed(e.fold_sd, 4) + ")";
  for (int c = 0; c < e.matrix.n; ++c)
    s += "  " + std::string(e.matrix.n == kNumClasses ? kClassNames[static_cast<std::size_t>(c)] : std::to_string(c).c_str()) +
         " F1 " + format_fixed(e.metrics.f1[static_cast<std::size_t>(c)], 4);
  return s;
}

// ---------------------------------------------------------------------------
// Entry point

/// Runs one command line; returns the process exit code (0 ok, 1 invalid
/// input, 2 usage).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"playclass: tracking, features and play classification for video-tracked birds", "playclass"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);

  std::optional<std::uint64_t> seed_flag;
  std::string config_flag, out_dir_flag;
  std::optional<int> jobs_flag;
  app.add_option("--seed", seed_flag, "Random seed (overrides the config file)");
  app.add_option("--config", config_flag, "TOML-style configuration file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir_flag, "Directory for outputs and run.json");
  app.add_option("--jobs", jobs_flag, "Parallel workers for folds")->check(CLI::PositiveNumber);

  std::map<std::string, std::string> a;  // per-subcommand string flags
  std::vector<std::string> multi_a, multi_b;
  std::optional<double> tau_flag;
  std::optional<int> frames_flag, permutations_flag;
  std::string model_flag;

  auto* validate = app.add_subcommand("validate", "Check input files against their formats and each other");
  validate->add_option("--tracks", a["tracks"], "Tracks TSV");
  validate->add_option("--labels", a["labels"], "Labels CSV");
  validate->add_option("--manifest", a["manifest"], "Dataset manifest CSV");
  validate->add_option("--features", a["features"], "Features CSV");
  validate->add_option("--embeddings", a["embeddings"], "Embedding bundle directory");

  auto* features = app.add_subcommand("features", "Compute 171-dim window features from tracked masks");
  features->add_option("--tracks", a["tracks"], "Tracks TSV")->required();
  features->add_option("--labels", a["labels"], "Labels CSV")->required();
  features->add_option("--manifest", a["manifest"], "Dataset manifest CSV (per-video fps)");
  features->add_option("--out", a["out"], "Output features CSV")->required();

  auto* plan = app.add_subcommand("plan-chunks", "Choose grounding frame, chunk boundaries and point prompts");
  plan->add_option("--detections,--tracks", a["tracks"], "Detections or tracks TSV")->required();
  plan->add_option("--video", a["video"], "Video to plan (needed when the file holds several)");
  plan->add_option("--frames", frames_flag, "Frame count (default: manifest, else last frame + 1)");
  plan->add_option("--manifest", a["manifest"], "Dataset manifest CSV");
  plan->add_option("--out", a["out"], "Output plan JSON")->required();

  auto* match = app.add_subcommand("match-ids", "Propose identity transfers across chunk boundaries");
  match->add_option("--tracks", a["tracks"], "Chunked tracks TSV")->required();
  match->add_option("--plan", a["plan"], "Plan JSON")->required();
  match->add_option("--tau", tau_flag, "Minimum IoU for a transfer");
  match->add_option("--out", a["out"], "Output matches JSON")->required();

  auto* review = app.add_subcommand("review-export", "Write the review bundle (manifest.json and crops)");
  review->add_option("--tracks", a["tracks"], "Chunked tracks TSV")->required();
  review->add_option("--matches", a["matches"], "Matches JSON")->required();
  review->add_option("--crops", a["crops"], "Directory of prepared crops (optional)");
  review->add_option("--review-dir", a["review_dir"], "Bundle directory (default: <out-dir>/review)");

  auto* apply = app.add_subcommand("apply-corrections", "Apply reviewer corrections to chunked tracks");
  apply->add_option("--tracks", a["tracks"], "Chunked tracks TSV")->required();
  apply->add_option("--corrections", a["corrections"], "Corrections JSON")->required();
  apply->add_option("--plan", a["plan"], "Plan JSON (legal boundaries)")->required();
  apply->add_option("--out", a["out"], "Output tracks TSV")->required();

  auto* trackeval = app.add_subcommand("trackeval", "HOTA and IDF1 on keyframe annotations");
  trackeval->add_option("--gt", a["gt"], "Keyframe annotations TSV")->required();
  trackeval->add_option("--pred", a["pred"], "Predicted tracks TSV")->required();
  trackeval->add_option("--method", a["method"], "Method name for the report");

  auto add_data_flags = [&](CLI::App* sc) {
    sc->add_option("--labels", a["labels"], "Labels CSV");
    sc->add_option("--manifest", a["manifest"], "Dataset manifest CSV");
    sc->add_option("--features", a["features"], "Features CSV");
    sc->add_option("--embeddings", a["embeddings"], "Embedding bundle directory");
    sc->add_option("--model", model_flag, "mlp, cnn or hybrid");
  };
  auto* train = app.add_subcommand("train", "Leave-one-cage-out training and evaluation");
  add_data_flags(train);
  auto* ablate = app.add_subcommand("ablate", "Base run plus one run per toggle");
  add_data_flags(ablate);
  ablate->add_option("--toggle", multi_a, "epochs=1, no_class_weights, no_label_smoothing, mlp, K=16, K=32, K=48");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics from confusion matrices");
  evaluate_cmd->add_option("--confusion", multi_a, "Per-fold confusion CSV (repeatable)");
  evaluate_cmd->add_option("--report", a["report"], "report.json of a training run (uses its fold matrices)");

  auto* analyze = app.add_subcommand("analyze", "CKA, nearest-neighbour probing, Spearman and exports");
  analyze->add_option("--embeddings", multi_b, "NAME=DIR embedding bundle (repeatable)");
  analyze->add_option("--labels", a["labels"], "Labels CSV for neighbour probing");
  analyze->add_option("--knn-backbone", a["knn_backbone"], "Bundle used for probing (default: first)");
  analyze->add_option("--confusion", a["confusion"], "Confusion CSV to export as row percentages");
  analyze->add_option("--spearman", a["spearman"], "CSV holding the two columns to correlate");
  analyze->add_option("--x", a["x"], "First Spearman column");
  analyze->add_option("--y", a["y"], "Second Spearman column");
  analyze->add_option("--permutations", permutations_flag, "Permutation p-value with this many shuffles");
  analyze->add_flag("--export-embeddings", "Write mean-pooled embeddings per bundle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const auto* sc = app.get_subcommands().front();
  const std::string cmd = sc->get_name();
  try {
    const Logger log(err, log_level_from_env());
    Settings s;
    if (!config_flag.empty()) apply_config_file(s, config_flag);
    if (seed_flag) s.seed = *seed_flag;
    if (jobs_flag) s.jobs = *jobs_flag;
    if (!out_dir_flag.empty()) s.out_dir = out_dir_flag;
    for (const char* k : {"labels", "manifest", "features", "embeddings", "tracks"}) {
      auto it = a.find(k);
      if (it == a.end() || it->second.empty()) continue;
      if (std::string(k) == "labels") s.data.labels = it->second;
      if (std::string(k) == "manifest") s.data.manifest = it->second;
      if (std::string(k) == "features") s.data.features = it->second;
      if (std::string(k) == "embeddings" && cmd != "analyze") s.data.embeddings = it->second;
      if (std::string(k) == "tracks") s.data.tracks = it->second;
    }
    if (!model_flag.empty()) s.run.model.kind = parse_model_kind(model_flag);
    if (cmd == "ablate" && !multi_a.empty()) s.toggles = multi_a;
    if (tau_flag) s.planner.tau_match = *tau_flag;

    const fs::path out_dir = s.out_dir;
    fs::create_directories(out_dir);
    json args = json::object();
    for (const auto& [k, v] : a)
      if (!v.empty()) args[k] = v;
    if (!multi_a.empty()) args["list"] = multi_a;
    if (!multi_b.empty()) args["bundles"] = multi_b;
    write_json(out_dir / "run.json", {{"command", cmd}, {"version", kVersion}, {"args", args}, {"config", s.to_json()}});
    log.debug("resolved configuration written to " + (out_dir / "run.json").string());

    if (cmd == "validate") {
      bool any = false;
      std::optional<DatasetManifest> manifest;
      if (!s.data.manifest.empty()) {
        manifest = load_manifest(s.data.manifest);
        out << "manifest: " << manifest->videos.size() << " videos, " << manifest->birds.size() << " birds, "
            << manifest->cages().size() << " cages\n";
        any = true;
      }
      if (!s.data.tracks.empty()) {
        const auto tracks = load_tracks(s.data.tracks);
        if (manifest) validate_tracks_against_manifest(tracks, *manifest);
        out << "tracks: " << tracks.size() << " records\n";
        any = true;
      }
      std::optional<std::vector<LabelWindow>> labels;
      if (!s.data.labels.empty()) {
        labels = load_labels(s.data.labels);
        if (manifest)
          for (const auto& l : *labels)
            if (!manifest->video(l.video_id))
              throw ValidationError("label window " + l.key().str() + " refers to a video missing from the manifest");
        const auto h = category_histogram(*labels);
        out << "labels: " << labels->size() << " windows (other " << h[0] << ", object " << h[1] << ", locomotor "
            << h[2] << ", social " << h[3] << ")\n";
        any = true;
      }
      if (!s.data.features.empty()) {
        out << "features: " << load_features(s.data.features).size() << " windows\n";
        any = true;
      }
      if (!s.data.embeddings.empty()) {
        const auto b = load_embeddings(s.data.embeddings, labels ? &*labels : nullptr);
        for (const auto& w : b.warnings) log.warn(w);
        out << "embeddings: " << b.windows.size() << " windows, D = " << b.dim() << "\n";
        any = true;
      }
      if (!any) throw UsageError("validate needs at least one of --tracks, --labels, --manifest, --features, --embeddings");
      out << "ok\n";
    } else if (cmd == "features") {
      const auto tracks = load_tracks(s.data.tracks);
      const auto labels = load_labels(s.data.labels);
      std::optional<DatasetManifest> manifest;
      if (!s.data.manifest.empty()) manifest = load_manifest(s.data.manifest);
      const auto rows = extract_window_features(tracks, labels, s.features, manifest ? &*manifest : nullptr);
      std::size_t low = 0;
      for (const auto& r : rows) low += r.low_coverage;
      write_file_atomic(a["out"], serialize_features(rows));
      if (low) log.warn(std::to_string(low) + " windows flagged low coverage");
      out << "wrote " << rows.size() << " windows x " << kFeatureDim << " features to " << a["out"] << "\n";
    } else if (cmd == "plan-chunks") {
      const auto tracks = load_tracks(s.data.tracks);
      const auto video = pick_video(tracks, a["video"]);
      const auto frames = group_by_frame(tracks, video);
      int frame_count = frames.empty() ? 0 : frames.rbegin()->first + 1;
      if (!s.data.manifest.empty()) {
        const auto m = load_manifest(s.data.manifest);
        if (const auto* v = m.video(video)) frame_count = v->frame_count;
      }
      if (frames_flag) frame_count = *frames_flag;
      auto p = plan_boundaries(frames, frame_count, s.planner);
      std::vector<std::pair<int, PointPrompt>> prompts;
      for (int b : p.boundaries) {
        auto it = frames.find(b - 1);
        if (it == frames.end()) continue;
        for (const auto& pr : extract_point_prompts(it->second)) prompts.emplace_back(b, pr);
      }
      for (const auto& w : p.warnings) log.warn(w);
      write_json(a["out"], plan_json(p, prompts));
      out << video << ": grounding frame " << p.grounding_frame << ", " << p.boundaries.size() << " boundaries\n";
    } else if (cmd == "match-ids") {
      const auto p = plan_from_json(read_json(a["plan"]));
      const auto tracks = load_tracks(s.data.tracks);
      const auto frames = group_by_frame(tracks, p.video_id);
      const auto ms = match_plan(frames, p, s.planner.tau_match);
      std::size_t flagged = 0;
      for (const auto& m : ms) flagged += m.flags().size();
      write_json(a["out"], matches_json(p.video_id, s.planner.tau_match, ms));
      out << p.video_id << ": " << ms.size() << " boundaries, " << flagged << " flagged proposals\n";
    } else if (cmd == "review-export") {
      const auto mj = read_json(a["matches"]);
      const auto ms = matches_from_json(mj);
      std::string video;
      double tau = s.planner.tau_match;
      try {
        video = mj.at("video_id").get<std::string>();
        tau = mj.value("tau_match", tau);
      } catch (const json::exception& e) {
        throw ValidationError(std::string("matches file: ") + e.what());
      }
      const auto tracks = load_tracks(s.data.tracks);
      const auto frames = group_by_frame(tracks, video);
      const fs::path dir = a["review_dir"].empty() ? out_dir / "review" : fs::path(a["review_dir"]);
      const auto m = export_review_bundle(dir, video, frames, ms, tau, a["crops"]);
      std::size_t missing = 0;
      for (const auto& b : m.boundaries)
        for (const auto& p : b.proposals) missing += p.prev_crop.missing + p.next_crop.missing;
      if (missing) log.warn(std::to_string(missing) + " crops missing");
      out << "review bundle: " << (dir / "manifest.json").string() << " (" << m.boundaries.size() << " boundaries)\n";
    } else if (cmd == "apply-corrections") {
      const auto p = plan_from_json(read_json(a["plan"]));
      const auto corr = corrections_from_json(read_json(a["corrections"]));
      const auto res = apply_corrections(load_tracks(s.data.tracks), corr, p.boundaries);
      for (const auto& w : res.warnings) log.warn(w);
      write_file_atomic(a["out"], serialize_tracks(res.tracks));
      out << "wrote " << res.tracks.size() << " records to " << a["out"] << "\n";
    } else if (cmd == "trackeval") {
      const auto rep = evaluate_tracking(load_tracks(a["gt"]), load_tracks(a["pred"]), s.trackeval, a["method"]);
      for (const auto& w : rep.warnings) log.warn(w);
      write_json(out_dir / "trackeval.json", tracking_report_json(rep));
      out << "HOTA " << format_fixed(rep.hota_mean, 4) << " +- " << format_fixed(rep.hota_sd, 4) << "  IDF1 "
          << format_fixed(rep.idf1_mean, 4) << " +- " << format_fixed(rep.idf1_sd, 4) << "  (" << rep.videos.size()
          << " videos, " << rep.similarity << " similarity)\n";
    } else if (cmd == "train") {
      const auto d = load_training_data(s, log);
      const auto rep = run_loco(d.dataset, resolved_run(s));
      for (const auto& w : rep.warnings) log.warn(w);
      write_run_outputs(out_dir, rep);
      out << metrics_line(rep.eval) << "\n";
    } else if (cmd == "ablate") {
      const auto d = load_training_data(s, log);
      const auto rows = run_ablation_grid(d.dataset, resolved_run(s), s.toggles);
      std::string csv = "name,macro_f1,fold_sd,delta,delta_sd\n";
      for (const auto& r : rows) {
        csv += r.name + "," + format_double(r.report.eval.metrics.macro_f1) + "," + format_double(r.report.eval.fold_sd) +
               "," + format_double(r.delta) + "," + format_double(r.delta_sd) + "\n";
        out << r.name << ": macro-F1 " << format_fixed(100 * r.report.eval.metrics.macro_f1, 1) << " +- "
            << format_fixed(100 * r.report.eval.fold_sd, 1);
        if (r.name != "base")
          out << "  delta " << format_fixed(100 * r.delta, 1) << " +- " << format_fixed(100 * r.delta_sd, 1);
        out << "\n";
      }
      write_json(out_dir / "ablation.json", ablation_json(rows));
      write_file_atomic(out_dir / "ablation.csv", csv);
    } else if (cmd == "evaluate") {
      std::vector<ConfusionMatrix> mats;
      for (const auto& f : multi_a) mats.push_back(parse_confusion_csv(read_file(f)));
      if (!a["report"].empty()) {
        const auto j = read_json(a["report"]);
        try {
          for (const auto& f : j.at("folds")) {
            const auto rows = f.at("confusion").get<std::vector<std::vector<long long>>>();
            ConfusionMatrix m(static_cast<int>(rows.size()));
            for (int t = 0; t < m.n; ++t) {
              if (static_cast<int>(rows[static_cast<std::size_t>(t)].size()) != m.n)
                throw ValidationError("report: fold confusion matrix is not square");
              for (int p = 0; p < m.n; ++p) m.at(t, p) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            }
            mats.push_back(m);
          }
        } catch (const json::exception& e) {
          throw ValidationError(std::string("report: ") + e.what());
        }
      }
      if (mats.empty()) throw UsageError("evaluate needs --confusion or --report");
      const auto e = evaluate(mats);
      write_json(out_dir / "evaluation.json", eval_report_json(e));
      write_file_atomic(out_dir / "confusion_percent.csv", row_normalized_csv(e.matrix));
      out << metrics_line(e) << "\n";
    } else if (cmd == "analyze") {
      bool any = false;
      std::vector<std::pair<std::string, EmbeddingBundle>> bundles;
      for (const auto& spec : multi_b) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--embeddings takes NAME=DIR, got '" + spec + "'");
        bundles.emplace_back(spec.substr(0, eq), load_embeddings(spec.substr(eq + 1)));
      }
      if (!bundles.empty()) {
        std::vector<NamedBundle> named;
        for (const auto& [n, b] : bundles) named.push_back({n, &b});
        const auto cka = cka_matrix(named);
        write_file_atomic(out_dir / "cka.csv", cka_csv(cka));
        out << "CKA over " << cka.windows << " shared windows written to cka.csv\n";
        any = true;
      }
      std::map<WindowKey, std::string> fine;
      if (!a["labels"].empty())
        for (const auto& l : load_labels(a["labels"])) fine[l.key()] = std::string(l.behaviour_name());
      if (!fine.empty() && !bundles.empty()) {
        const EmbeddingBundle* b = &bundles.front().second;
        if (!a["knn_backbone"].empty()) {
          b = nullptr;
          for (const auto& [n, bb] : bundles)
            if (n == a["knn_backbone"]) b = &bb;
          if (!b) throw UsageError("--knn-backbone names no loaded bundle");
        }
        std::vector<const EmbeddingSequence*> rows;
        std::vector<std::string> names;
        for (const auto& w : b->windows) {
          auto it = fine.find(w.key);
          if (it == fine.end()) continue;
          rows.push_back(&w);
          names.push_back(it->second);
        }
        const auto knn = knn_probe(mean_pooled(rows), names);
        write_file_atomic(out_dir / "knn.csv", knn_csv(knn));
        out << "nearest-neighbour probe over " << rows.size() << " windows written to knn.csv\n";
      }
      if (analyze->count("--export-embeddings"))
        for (const auto& [n, b] : bundles) write_file_atomic(out_dir / ("embeddings_" + n + ".csv"), embeddings_csv(b, fine));
      if (!a["confusion"].empty()) {
        write_file_atomic(out_dir / "confusion_percent.csv", row_normalized_csv(parse_confusion_csv(read_file(a["confusion"]))));
        out << "row-normalised confusion written to confusion_percent.csv\n";
        any = true;
      }
      if (!a["spearman"].empty()) {
        require(a["x"], "--x");
        require(a["y"], "--y");
        const auto text = read_file(a["spearman"]);
        const auto lines = lines_of(text);
        if (lines.empty()) throw ValidationError("spearman CSV is empty");
        const auto header = parse_csv_line(lines[0], 1);
        auto col = [&](const std::string& name) {
          auto it = std::find(header.begin(), header.end(), name);
          if (it == header.end()) throw ValidationError("spearman CSV has no column '" + name + "'");
          return static_cast<std::size_t>(it - header.begin());
        };
        const auto cx = col(a["x"]), cy = col(a["y"]);
        std::vector<double> xs, ys;
        for (std::size_t i = 1; i < lines.size(); ++i) {
          if (trim(lines[i]).empty()) continue;
          const auto f = parse_csv_line(lines[i], i + 1);
          if (f.size() != header.size()) throw ParseError("row width differs from header", i + 1);
          xs.push_back(parse_double(f[cx], i + 1));
          ys.push_back(parse_double(f[cy], i + 1));
        }
        const auto r = spearman(xs, ys, permutations_flag ? static_cast<std::size_t>(*permutations_flag) : 0, s.seed);
        write_json(out_dir / "spearman.json", spearman_json(r));
        out << "Spearman rho " << format_fixed(r.rho, 4) << ", p " << r.p << " (n = " << r.n << ")\n";
        any = true;
      }
      if (!any) throw UsageError("analyze needs --embeddings, --confusion or --spearman");
    }
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sc->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace playclass::cli
