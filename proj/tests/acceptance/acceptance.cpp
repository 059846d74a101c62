// One line per acceptance criterion; exit status is the number of failures.

#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "playclass/playclass.hpp"
#include "playclass/synthetic.hpp"
#include "support/oracles.hpp"
#include "support/planner_oracles.hpp"
#include "support/test_util.hpp"

using namespace playclass;
namespace fs = std::filesystem;

namespace {

// A failed check throws with a message; the runner turns it into a FAIL line.
struct Failed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw Failed(what);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "playclass");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw Failed("playclass " + args[1] + " exited " + std::to_string(code) + ": " + err.str());
  return code;
}

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<std::string()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = true;
  try {
    detail = body();
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs >= limit_s) {
    ok = false;
    detail += "; over the time limit";
  }
  if (!ok) ++failures;
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << " (" << fmt("%.2f", secs) << " s";
  if (limit_s > 0) std::cout << ", limit " << fmt("%.0f", limit_s) << " s";
  std::cout << ")" << std::endl;
}

// ---------------------------------------------------------------------------

std::string reference_table() {
  const auto dir = playclass::testing::scratch_dir("accept_table");
  const auto m = reconstruct_counts({{93.5, 4.8, 1.7}, {31.2, 66.1, 2.7}, {8.5, 6.7, 84.8}}, {12585, 1345, 585});
  write_file_atomic(dir / "confusion.csv", confusion_csv(m));
  run_cli({"evaluate", "--confusion", (dir / "confusion.csv").string(), "--out-dir", (dir / "out").string()});
  const auto j = nlohmann::json::parse(read_file(dir / "out" / "evaluation.json"));
  const double f1[] = {0.948, 0.619, 0.744}, prec[] = {0.962, 0.582, 0.662};
  std::string detail = "F1";
  for (int c = 0; c < 3; ++c) {
    const double got_f1 = j["per_class"][c]["f1"], got_p = j["per_class"][c]["precision"];
    check(std::abs(got_f1 - f1[c]) <= 0.003, "F1 of " + std::string(kClassNames[static_cast<std::size_t>(c)]) + " is " + fmt("%.4f", got_f1));
    check(std::abs(got_p - prec[c]) <= 0.003, "precision of " + std::string(kClassNames[static_cast<std::size_t>(c)]) + " is " + fmt("%.4f", got_p));
    detail += " " + fmt("%.3f", got_f1);
  }
  const double macro = j["macro_f1"];
  check(std::abs(macro - 0.770) <= 0.002, "macro-F1 is " + fmt("%.4f", macro));
  return detail + ", macro " + fmt("%.4f", macro);
}

ModelConfig tiny(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.input_dim = 3;
  c.segments = 4;
  c.bottleneck = 5;
  c.conv_channels = 4;
  c.attention_dim = 3;
  c.mlp_hidden = 6;
  c.feature_dim = 4;
  return c;
}

std::string gradients() {
  Rng rng(31);
  double worst = 0;
  int checked = 0;
  for (int trial = 0; trial < 3; ++trial)
    for (auto kind : {ModelKind::Mlp, ModelKind::Cnn, ModelKind::Hybrid}) {
      const auto cfg = tiny(kind);
      Model m(cfg);
      m.init(rng.below(1u << 30));
      for (auto& p : m.params()) p *= 1.5;
      std::vector<Sample> data;
      for (int i = 0; i < 5; ++i) {
        Sample s;
        s.label = i % 3;
        if (kind != ModelKind::Mlp) {
          s.tokens.resize(static_cast<std::size_t>(cfg.segments) * cfg.input_dim);
          for (auto& v : s.tokens) v = rng.normal();
        }
        s.features.resize(static_cast<std::size_t>(kind == ModelKind::Mlp ? cfg.input_dim : kind == ModelKind::Hybrid ? cfg.feature_dim : 0));
        for (auto& v : s.features) v = rng.normal();
        data.push_back(std::move(s));
      }
      const std::vector<std::size_t> idx{0, 1, 2, 3, 4};
      const LossConfig lc{{0.5, 1.2, 1.3}, 0.1};
      std::vector<double> grad;
      batch_loss(m, data, idx, lc, &grad);
      const double h = 1e-5;
      for (std::size_t i = 0; i < m.params().size(); ++i) {
        const double p = m.params()[i];
        m.params()[i] = p + h;
        const double up = batch_loss(m, data, idx, lc, nullptr);
        m.params()[i] = p - h;
        const double down = batch_loss(m, data, idx, lc, nullptr);
        m.params()[i] = p;
        const double num = (up - down) / (2 * h);
        const double rel = std::abs(grad[i] - num) / std::max({std::abs(grad[i]), std::abs(num), 1e-6});
        worst = std::max(worst, rel);
        ++checked;
      }
      check(worst < 1e-4, std::string(model_kind_name(kind)) + " max relative error " + fmt("%.2e", worst));
    }
  return std::to_string(checked) + " parameters over 3 variants, max relative error " + fmt("%.2e", worst);
}

std::string tracking_oracles() {
  Rng rng(4242);
  const int n = 120;
  for (int trial = 0; trial < n; ++trial) {
    const auto inst = oracle::random_tracking_instance(rng);
    const auto rep = evaluate_tracking(inst.gt, inst.pred);
    const auto brute = oracle::brute_tracking(inst.gt, inst.pred);
    const auto& v = rep.videos.at(0);
    check(std::abs(v.hota - brute.hota) <= 1e-9, "HOTA differs on instance " + std::to_string(trial));
    check(std::abs(v.idf1 - brute.idf1) <= 1e-9, "IDF1 differs on instance " + std::to_string(trial));
    for (int k = 0; k < kNumAlphas; ++k) {
      check(std::abs(v.per_alpha[static_cast<std::size_t>(k)].det_a - brute.det_a[static_cast<std::size_t>(k)]) <= 1e-9,
            "DetA differs on instance " + std::to_string(trial));
      check(std::abs(v.per_alpha[static_cast<std::size_t>(k)].ass_a - brute.ass_a[static_cast<std::size_t>(k)]) <= 1e-9,
            "AssA differs on instance " + std::to_string(trial));
    }

    // Perfect tracking: predictions are the annotations under other ids.
    auto perfect = inst.gt;
    for (auto& p : perfect) p.track_id += 500;
    const auto self = evaluate_tracking(inst.gt, perfect);
    check(self.hota_mean == 1.0 && self.idf1_mean == 1.0, "perfect tracking below 1 on instance " + std::to_string(trial));

    // Prediction ids relabelled by a random permutation.
    std::vector<int> ids;
    for (const auto& p : inst.pred) ids.push_back(p.track_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto perm = ids;
    rng.shuffle(perm);
    auto pred = inst.pred;
    for (auto& p : pred)
      p.track_id = 1000 + perm[static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), p.track_id) - ids.begin())];
    const auto relabelled = evaluate_tracking(inst.gt, pred);
    check(relabelled.hota_mean == rep.hota_mean && relabelled.idf1_mean == rep.idf1_mean,
          "id permutation changed the scores on instance " + std::to_string(trial));
  }
  return std::to_string(n) + " instances match the brute-force definitions, perfect = 1, permutation invariant";
}

std::string hungarian_optimality() {
  Rng rng(606);
  const int n = 1500;
  for (int trial = 0; trial < n; ++trial) {
    const int rows = rng.uniform_int(1, 6), cols = rng.uniform_int(1, 6);
    const bool maximize = trial % 2 == 0;
    DenseMatrix c(rows, cols);
    for (auto& v : c.data) v = trial % 3 == 0 ? rng.uniform_int(0, 4) : rng.uniform(-10.0, 10.0);
    const auto got = hungarian(c, maximize);
    const auto want = oracle::brute_assignment(c, maximize);
    check(got.size() == want.size, "assignment size differs on matrix " + std::to_string(trial));
    check(std::abs(got.total - want.total) <= 1e-9, "total differs on matrix " + std::to_string(trial));
  }
  return std::to_string(n) + " matrices up to 6x6 equal exhaustive search";
}

std::string feature_pipeline() {
  synthetic::Config cfg;
  cfg.frames = 22500;
  const auto video = synthetic::make_video("v", {1, 2, 3}, cfg, 808);
  const auto feats = extract_window_features(video.tracks, video.labels);
  std::map<int, int> per_bird;
  for (const auto& f : feats) ++per_bird[f.key.bird_id];
  check(per_bird.size() == 3, "expected 3 birds");
  for (const auto& [bird, n] : per_bird) check(n == 180, "bird " + std::to_string(bird) + " has " + std::to_string(n) + " windows");
  // Serialized rows: key, 171 values, low-coverage flag.
  const auto text = serialize_features(feats);
  const auto rows = lines_of(text);
  for (std::size_t i = 0; i < 2; ++i)
    check(parse_csv_line(rows[i], i + 1).size() == 173, "feature vectors are not 171-dim");

  std::vector<std::uint8_t> cells(100 * 100, 1);
  const auto sq = frame_spatial_features(BinaryMask::from_crop(300, 300, 10, 10, 100, 100, cells));
  check(std::abs(sq[kCircularity] - kPi / 4) <= 0.01 * kPi / 4, "square circularity " + fmt("%.4f", sq[kCircularity]));
  double disc_worst = 0;
  for (double r : {20.0, 50.0, 100.0}) {
    const auto d = frame_spatial_features(synthetic::rasterize_disc(300, 300, 150, 150, r));
    disc_worst = std::max(disc_worst, std::abs(d[kCircularity] - 1));
  }
  check(disc_worst <= 0.05, "disc circularity off by " + fmt("%.4f", disc_worst));

  auto shifted = video.tracks;
  for (auto& t : shifted) {
    t.mask = t.mask->translated(3, -2);
    t.bbox = t.mask->bounds();
  }
  const auto moved = extract_window_features(shifted, video.labels);
  check(moved.size() == feats.size(), "translation changed the window count");
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (int j = 0; j < kFeatureDim; ++j)
      check(std::bit_cast<std::uint64_t>(feats[i].values[static_cast<std::size_t>(j)]) ==
                std::bit_cast<std::uint64_t>(moved[i].values[static_cast<std::size_t>(j)]),
            "translation changed window " + std::to_string(i) + " column " + std::to_string(j));
  return "3 x 180 windows of 171 values, square " + fmt("%.4f", sq[kCircularity]) + ", disc within " +
         fmt("%.3f", disc_worst) + ", translation bitwise";
}

struct TrainFixture {
  fs::path dir;
  DatasetManifest manifest;
};

TrainFixture make_train_fixture() {
  TrainFixture fx{playclass::testing::scratch_dir("accept_e2e"), {}};
  synthetic::Config sc;
  sc.frames = 4500;
  const auto data = synthetic::make_dataset(5, 1, sc, 2025);
  fx.manifest = data.manifest;
  write_tracks(fx.dir / "tracks.tsv", data.tracks);
  write_file_atomic(fx.dir / "labels.csv", serialize_labels(data.labels));
  write_file_atomic(fx.dir / "manifest.csv", serialize_manifest(data.manifest));
  return fx;
}

std::vector<std::string> train_args(const TrainFixture& fx, const std::string& out) {
  return {"train",      "--labels",   (fx.dir / "labels.csv").string(), "--manifest", (fx.dir / "manifest.csv").string(),
          "--features", (fx.dir / "features.csv").string(), "--model", "mlp", "--seed", "7", "--out-dir",
          (fx.dir / out).string()};
}

std::string end_to_end(const TrainFixture& fx) {
  run_cli({"features", "--tracks", (fx.dir / "tracks.tsv").string(), "--labels", (fx.dir / "labels.csv").string(),
           "--manifest", (fx.dir / "manifest.csv").string(), "--out", (fx.dir / "features.csv").string(),
           "--out-dir", (fx.dir / "features_run").string()});
  run_cli(train_args(fx, "run_a"));
  const auto rep = nlohmann::json::parse(read_file(fx.dir / "run_a" / "report.json"));
  check(rep["folds"].size() == 5, "expected 5 folds");
  std::map<int, int> test_cage;
  for (const auto& f : rep["folds"]) {
    FoldSpec s{f["fold_id"], f["test_cage"], f["val_cage"], f["train_cages"].get<std::vector<int>>()};
    assert_no_leakage(s);
    check(s.train_cages.size() == 3, "fold " + std::to_string(s.fold_id) + " does not train on 3 cages");
    test_cage[s.fold_id] = s.test_cage;
  }
  std::set<int> tested;
  for (const auto& [id, c] : test_cage) tested.insert(c);
  check(tested.size() == 5, "test cages are not all distinct");
  // Every prediction comes from its fold's held-out cage.
  const auto preds = read_file(fx.dir / "run_a" / "predictions.csv");
  std::size_t ln = 0, n = 0;
  for (auto line : lines_of(preds)) {
    if (ln++ == 0 || trim(line).empty()) continue;
    const auto f = parse_csv_line(line, ln);
    const auto key = WindowKey::parse(f[0], ln);
    check(fx.manifest.video(key.video_id)->cage_id == test_cage.at(std::stoi(f[1])), "window " + f[0] + " leaked");
    ++n;
  }
  const double macro = rep["evaluation"]["macro_f1"];
  check(macro >= 0.90, "macro-F1 " + fmt("%.4f", macro));
  return "macro-F1 " + fmt("%.4f", macro) + " over " + std::to_string(n) + " windows, 5 disjoint-cage folds";
}

std::string chunk_planner() {
  Rng rng(2024);
  const PlannerConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto s = oracle::random_stream(rng, 125, trial % 5 == 0 ? 0.05 : 0.9);
    if (s.dets.empty()) s.dets.push_back(oracle::det(60, 1, 0, 0));
    check(score_grounding(group_by_frame(s.dets, "v"), cfg).frame == oracle::oracle_grounding(s.dets, cfg),
          "grounding differs on stream " + std::to_string(trial));
  }
  Rng brng(77);
  for (int trial = 0; trial < 50; ++trial) {
    PlannerConfig c;
    if (trial % 3 == 1) {
      c.chunk_len = 200;
      c.delta = 150;
    }
    const auto s = oracle::random_stream(brng, 4700, trial % 7 == 0 ? 0.004 : 0.6);
    const auto plan = plan_boundaries(group_by_frame(s.dets, "v"), s.frame_count, c);
    check(plan.boundaries == oracle::oracle_boundaries(s.dets, s.frame_count, c), "boundaries differ on stream " + std::to_string(trial));
  }
  Rng prng(21);
  const int blobs = 500;
  for (int trial = 0; trial < blobs; ++trial) {
    const auto m = playclass::testing::random_blob(prng, 60, 60, 400);
    const auto p = point_prompt(m);
    check(!p.lost && m.at(p.y, p.x), "prompt outside mask " + std::to_string(trial));
  }
  return "grounding and boundaries equal the oracles on 50 + 50 streams, " + std::to_string(blobs) + " prompts inside their masks";
}

DenseRows random_rows(Rng& rng, int n, int p) {
  DenseRows x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
  return x;
}

DenseRows random_orthogonal(Rng& rng, int p) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_rows(rng, p, p));
  return qr.householderQ();
}

std::string cka_suite() {
  Rng rng(9);
  double self = 0, inv = 0, sym = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 6 + static_cast<int>(rng.below(60)), p = 1 + static_cast<int>(rng.below(40)),
              q = 1 + static_cast<int>(rng.below(40));
    const auto x = random_rows(rng, n, p), y = random_rows(rng, n, q);
    const double base = linear_cka(x, y);
    self = std::max({self, std::abs(linear_cka(x, x) - 1), std::abs(linear_cka(y, y) - 1)});
    sym = std::max(sym, std::abs(base - linear_cka(y, x)));
    const double c = rng.uniform(0.1, 10.0) * (rng.uniform01() < 0.5 ? -1 : 1);
    const DenseRows xr = c * x * random_orthogonal(rng, p);
    const DenseRows yr = y * random_orthogonal(rng, q) * rng.uniform(0.1, 10.0);
    inv = std::max({inv, std::abs(base - linear_cka(xr, y)), std::abs(base - linear_cka(x, yr)), std::abs(base - linear_cka(xr, yr))});
  }
  check(self < 1e-12, "self-similarity off by " + fmt("%.2e", self));
  check(inv < 1e-8, "invariance deviation " + fmt("%.2e", inv));
  check(sym < 1e-12, "asymmetry " + fmt("%.2e", sym));
  return "100 pairs: |self - 1| " + fmt("%.1e", self) + ", invariance " + fmt("%.1e", inv) + ", symmetry " + fmt("%.1e", sym);
}

std::string determinism(const TrainFixture& fx) {
  if (!fs::exists(fx.dir / "features.csv"))
    run_cli({"features", "--tracks", (fx.dir / "tracks.tsv").string(), "--labels", (fx.dir / "labels.csv").string(),
             "--manifest", (fx.dir / "manifest.csv").string(), "--out", (fx.dir / "features.csv").string(),
             "--out-dir", (fx.dir / "features_run").string()});
  if (!fs::exists(fx.dir / "run_a" / "report.json")) run_cli(train_args(fx, "run_a"));
  run_cli(train_args(fx, "run_b"));
  const auto a = read_file(fx.dir / "run_a" / "report.json"), b = read_file(fx.dir / "run_b" / "report.json");
  check(a == b, "report.json differs between runs");
  return "report.json byte-identical across two runs (" + std::to_string(a.size()) + " bytes)";
}

}  // namespace

int main() {
  criterion("reference confusion table reproduces its scores", 1, reference_table);
  criterion("analytic gradients match central differences", 30, gradients);
  criterion("HOTA and IDF1 equal brute-force oracles", 60, tracking_oracles);
  criterion("Hungarian totals equal exhaustive search", 30, hungarian_optimality);
  criterion("feature pipeline shapes and invariances", 60, feature_pipeline);
  const auto fx = make_train_fixture();
  criterion("features + MLP under LOCO reach macro-F1 0.90", 300, [&] { return end_to_end(fx); });
  criterion("chunk planner equals exhaustive oracles", 30, chunk_planner);
  criterion("linear CKA self-similarity, invariance and symmetry", 10, cka_suite);
  criterion("train is deterministic for a fixed seed", 0, [&] { return determinism(fx); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
