#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "playclass/dataset_io.hpp"
#include "playclass/mask_features.hpp"
#include "playclass/numeric.hpp"
#include "playclass/play_classifier.hpp"

namespace playclass {

// ---------------------------------------------------------------------------
// Folds

struct FoldSpec {
  int fold_id = 0;  // 1-based
  int test_cage = 0;
  int val_cage = 0;
  std::vector<int> train_cages;
};

/// Throws unless the train, validation and test cage sets are pairwise
/// disjoint.
inline void assert_no_leakage(const FoldSpec& f) {
  std::set<int> train(f.train_cages.begin(), f.train_cages.end());
  if (f.test_cage == f.val_cage || train.count(f.test_cage) || train.count(f.val_cage) ||
      train.size() != f.train_cages.size())
    throw ValidationError("fold " + std::to_string(f.fold_id) + ": cage sets of train/val/test overlap");
}

/// Fold i tests on the i-th cage (ascending) and validates on the next one
/// in circular order; the rest train. Exactly five cages unless
/// `any_cage_count` is set (then at least three).
inline std::vector<FoldSpec> make_loco_folds(std::vector<int> cages, bool any_cage_count = false) {
  std::sort(cages.begin(), cages.end());
  cages.erase(std::unique(cages.begin(), cages.end()), cages.end());
  const int n = static_cast<int>(cages.size());
  if (!any_cage_count && n != 5)
    throw ValidationError("LOCO needs exactly 5 cages, found " + std::to_string(n) +
                          " (other counts need the explicit any-cage-count flag)");
  if (n < 3) throw ValidationError("LOCO needs at least 3 cages, found " + std::to_string(n));
  std::vector<FoldSpec> out;
  for (int i = 0; i < n; ++i) {
    FoldSpec f;
    f.fold_id = i + 1;
    f.test_cage = cages[static_cast<std::size_t>(i)];
    f.val_cage = cages[static_cast<std::size_t>((i + 1) % n)];
    for (int c : cages)
      if (c != f.test_cage && c != f.val_cage) f.train_cages.push_back(c);
    assert_no_leakage(f);
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confusion matrices and metrics

inline constexpr std::array<const char*, kNumClasses> kClassNames{"other", "object", "locomotor"};

struct ConfusionMatrix {
  int n = kNumClasses;
  std::vector<long long> counts = std::vector<long long>(kNumClasses * kNumClasses, 0);  // row = true

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes) : n(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

  long long& at(int t, int p) { return counts[static_cast<std::size_t>(t) * n + p]; }
  long long at(int t, int p) const { return counts[static_cast<std::size_t>(t) * n + p]; }
  long long row_sum(int t) const {
    long long s = 0;
    for (int p = 0; p < n; ++p) s += at(t, p);
    return s;
  }
  long long col_sum(int p) const {
    long long s = 0;
    for (int t = 0; t < n; ++t) s += at(t, p);
    return s;
  }
  long long total() const {
    long long s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n != n) throw ValidationError("confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
  std::vector<double> precision, recall, f1;
  double macro_f1 = 0;
};

inline ClassMetrics class_metrics(const ConfusionMatrix& m) {
  if (m.total() == 0) throw ValidationError("confusion matrix is all zero");
  ClassMetrics out;
  for (int c = 0; c < m.n; ++c) {
    const long long tp = m.at(c, c), col = m.col_sum(c), row = m.row_sum(c);
    const double p = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double r = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    out.precision.push_back(p);
    out.recall.push_back(r);
    out.f1.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  out.macro_f1 = mean(out.f1);
  return out;
}

struct EvalReport {
  ConfusionMatrix matrix;  // summed over folds
  ClassMetrics metrics;
  std::vector<double> fold_macro_f1;
  double fold_mean = 0, fold_sd = 0;
};

/// Metrics from the fold-summed matrix; SD is the sample SD of per-fold
/// macro-F1.
inline EvalReport evaluate(const std::vector<ConfusionMatrix>& folds) {
  if (folds.empty()) throw ValidationError("no confusion matrices to evaluate");
  EvalReport r;
  r.matrix = ConfusionMatrix(folds.front().n);
  for (const auto& f : folds) {
    r.matrix += f;
    r.fold_macro_f1.push_back(f.total() > 0 ? class_metrics(f).macro_f1 : 0.0);
  }
  r.metrics = class_metrics(r.matrix);
  r.fold_mean = mean(r.fold_macro_f1);
  r.fold_sd = sample_sd(r.fold_macro_f1);
  return r;
}

/// Integer counts from row percentages and row supports: each row is scaled
/// to its support and rounded by largest remainder, so rows sum exactly to
/// the supports (ties go to the lower column index).
inline ConfusionMatrix reconstruct_counts(const std::vector<std::vector<double>>& row_percent,
                                          const std::vector<long long>& supports) {
  const int n = static_cast<int>(supports.size());
  if (static_cast<int>(row_percent.size()) != n) throw ValidationError("one support per row required");
  ConfusionMatrix m(n);
  for (int t = 0; t < n; ++t) {
    const auto& row = row_percent[static_cast<std::size_t>(t)];
    if (static_cast<int>(row.size()) != n) throw ValidationError("row percentages must be square");
    double psum = 0;
    for (double p : row) psum += p;
    std::vector<std::pair<double, int>> rem;
    long long used = 0;
    for (int p = 0; p < n; ++p) {
      const double exact = row[static_cast<std::size_t>(p)] / psum * static_cast<double>(supports[static_cast<std::size_t>(t)]);
      const auto fl = static_cast<long long>(std::floor(exact));
      m.at(t, p) = fl;
      used += fl;
      rem.emplace_back(exact - static_cast<double>(fl), p);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long long k = 0; k < supports[static_cast<std::size_t>(t)] - used; ++k) ++m.at(t, rem[static_cast<std::size_t>(k)].second);
  }
  return m;
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "true";
  for (int p = 0; p < m.n; ++p) out += std::string(",") + (m.n == kNumClasses ? kClassNames[static_cast<std::size_t>(p)] : std::to_string(p).c_str());
  out += "\n";
  for (int t = 0; t < m.n; ++t) {
    out += m.n == kNumClasses ? kClassNames[static_cast<std::size_t>(t)] : std::to_string(t);
    for (int p = 0; p < m.n; ++p) out += "," + std::to_string(m.at(t, p));
    out += "\n";
  }
  return out;
}

inline ConfusionMatrix parse_confusion_csv(std::string_view text) {
  const auto lines = lines_of(text);
  std::vector<std::vector<std::string>> rows;
  std::size_t ln = 0;
  for (auto l : lines) {
    ++ln;
    if (trim(l).empty()) continue;
    rows.push_back(parse_csv_line(l, ln));
  }
  if (rows.size() < 3) throw ParseError("confusion CSV needs a header and at least two rows", 1);
  const int n = static_cast<int>(rows.size()) - 1;
  if (static_cast<int>(rows[0].size()) != n + 1) throw ParseError("confusion CSV header width does not match row count", 1);
  ConfusionMatrix m(n);
  for (int t = 0; t < n; ++t) {
    const auto& r = rows[static_cast<std::size_t>(t) + 1];
    if (static_cast<int>(r.size()) != n + 1) throw ParseError("confusion CSV row has wrong width", static_cast<std::size_t>(t) + 2);
    for (int p = 0; p < n; ++p) {
      m.at(t, p) = parse_int<long long>(r[static_cast<std::size_t>(p) + 1], static_cast<std::size_t>(t) + 2);
      if (m.at(t, p) < 0) throw ValidationError("confusion CSV: negative count at row " + std::to_string(t + 2));
    }
  }
  return m;
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["confusion"] = nlohmann::json::array();
  for (int t = 0; t < r.matrix.n; ++t) {
    std::vector<long long> row;
    for (int p = 0; p < r.matrix.n; ++p) row.push_back(r.matrix.at(t, p));
    j["confusion"].push_back(row);
  }
  j["per_class"] = nlohmann::json::array();
  for (int c = 0; c < r.matrix.n; ++c)
    j["per_class"].push_back({{"class", r.matrix.n == kNumClasses ? kClassNames[static_cast<std::size_t>(c)] : std::to_string(c)},
                              {"precision", r.metrics.precision[static_cast<std::size_t>(c)]},
                              {"recall", r.metrics.recall[static_cast<std::size_t>(c)]},
                              {"f1", r.metrics.f1[static_cast<std::size_t>(c)]},
                              {"support", r.matrix.row_sum(c)}});
  j["macro_f1"] = r.metrics.macro_f1;
  j["fold_macro_f1"] = r.fold_macro_f1;
  j["fold_macro_f1_mean"] = r.fold_mean;
  j["fold_macro_f1_sd"] = r.fold_sd;
  return j;
}

// ---------------------------------------------------------------------------
// Dataset assembly

/// One labelled window with whatever inputs are available.
struct WindowRecord {
  WindowKey key;
  int cage = 0;
  int label = 0;  // class index
  int behaviour = 0;
  std::vector<double> features;  // kFeatureDim, may hold NaN; empty if absent
  std::vector<double> tokens;    // F_w x D; empty if absent
  int frames = 0, dim = 0;
};

struct LocoDataset {
  std::vector<WindowRecord> windows;
  std::vector<std::string> warnings;
  int token_dim = 0;
};

/// Joins labels with features and/or embeddings. Social windows are
/// excluded; windows lacking a requested input are dropped with a warning.
inline LocoDataset build_loco_dataset(const DatasetManifest& manifest, const std::vector<LabelWindow>& labels,
                                      const std::vector<WindowFeatureVector>* features,
                                      const EmbeddingBundle* embeddings) {
  LocoDataset d;
  std::map<WindowKey, const WindowFeatureVector*> fmap;
  if (features)
    for (const auto& f : *features) fmap[f.key] = &f;
  std::map<WindowKey, const EmbeddingSequence*> emap;
  if (embeddings) {
    for (const auto& e : embeddings->windows) emap[e.key] = &e;
    d.token_dim = embeddings->dim();
  }
  std::size_t missing_f = 0, missing_e = 0, social = 0;
  for (const auto& l : labels) {
    if (l.excluded_from_training()) {
      ++social;
      continue;
    }
    const auto* v = manifest.video(l.video_id);
    if (!v) throw ValidationError("label window " + l.key().str() + " refers to a video missing from the manifest");
    WindowRecord r;
    r.key = l.key();
    r.cage = v->cage_id;
    r.label = l.class_index();
    r.behaviour = l.behaviour;
    if (features) {
      auto it = fmap.find(r.key);
      if (it == fmap.end()) {
        ++missing_f;
        continue;
      }
      r.features.assign(it->second->values.begin(), it->second->values.end());
    }
    if (embeddings) {
      auto it = emap.find(r.key);
      if (it == emap.end()) {
        ++missing_e;
        continue;
      }
      r.frames = it->second->frames;
      r.dim = it->second->dim;
      r.tokens.assign(it->second->tokens.begin(), it->second->tokens.end());
    }
    d.windows.push_back(std::move(r));
  }
  if (social) d.warnings.push_back(std::to_string(social) + " social windows excluded");
  if (missing_f) d.warnings.push_back(std::to_string(missing_f) + " labelled windows without features dropped");
  if (missing_e) d.warnings.push_back(std::to_string(missing_e) + " labelled windows without embeddings dropped");
  return d;
}

// ---------------------------------------------------------------------------
// Runs

/// What the MLP reads: the handcrafted vector or the mean-pooled embedding.
enum class MlpInput { Features, Embeddings };

struct RunConfig {
  ModelConfig model;      // input_dim / feature_dim are filled from the data
  TrainConfig train;
  MlpInput mlp_input = MlpInput::Features;
  bool any_cage_count = false;
  int jobs = 1;

  nlohmann::json to_json() const {
    auto m = model.to_json();
    return {{"model", m},
            {"train", train.to_json()},
            {"mlp_input", mlp_input == MlpInput::Features ? "features" : "embeddings"},
            {"any_cage_count", any_cage_count}};
  }
};

struct WindowPrediction {
  WindowKey key;
  int truth = 0, predicted = 0;
};

struct FoldResult {
  FoldSpec spec;
  FitResult fit;
  ConfusionMatrix confusion;
  std::vector<WindowPrediction> predictions;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  ModelConfig model;           // with input sizes resolved
  std::vector<double> params;  // selected checkpoint
  nlohmann::json preprocessing;
};

struct RunReport {
  RunConfig config;
  std::vector<FoldResult> folds;
  EvalReport eval;
  std::vector<std::string> warnings;
};

namespace detail {

// Per-fold input preparation; statistics come from the training cages only.
struct FoldInputs {
  FeatureImputer imputer;
  Standardizer standardizer;
  bool use_features = false, use_tokens = false;

  Sample make(const WindowRecord& w, const RunConfig& cfg) const {
    Sample s;
    s.label = w.label;
    const auto kind = cfg.model.kind;
    if (use_features) {
      WindowFeatureVector v;
      std::copy(w.features.begin(), w.features.end(), v.values.begin());
      v = imputer.apply(v);
      s.features = standardizer.apply(std::vector<double>(v.values.begin(), v.values.end()));
    }
    if (kind == ModelKind::Mlp && cfg.mlp_input == MlpInput::Embeddings) {
      s.features.assign(static_cast<std::size_t>(w.dim), 0.0);
      for (int t = 0; t < w.frames; ++t)
        for (int d = 0; d < w.dim; ++d) s.features[static_cast<std::size_t>(d)] += w.tokens[static_cast<std::size_t>(t) * w.dim + d];
      for (auto& x : s.features) x /= w.frames;
    }
    if (kind != ModelKind::Mlp) s.tokens = adaptive_avg_pool(w.tokens, w.frames, w.dim, cfg.model.segments);
    return s;
  }
};

}  // namespace detail

inline FoldResult run_fold(const LocoDataset& data, const FoldSpec& fold, const RunConfig& cfg,
                           std::uint64_t fold_seed) {
  assert_no_leakage(fold);
  FoldResult out;
  out.spec = fold;
  const std::set<int> train_cages(fold.train_cages.begin(), fold.train_cages.end());
  std::vector<const WindowRecord*> tr, va, te;
  for (const auto& w : data.windows) {
    if (w.label < 0 || w.label >= cfg.model.n_classes) throw ValidationError("window " + w.key.str() + ": class outside the model");
    if (train_cages.count(w.cage)) tr.push_back(&w);
    else if (w.cage == fold.val_cage) va.push_back(&w);
    else if (w.cage == fold.test_cage) te.push_back(&w);
  }
  if (tr.empty()) throw ValidationError("fold " + std::to_string(fold.fold_id) + ": no training windows");

  detail::FoldInputs in;
  in.use_features = cfg.model.kind == ModelKind::Hybrid ||
                    (cfg.model.kind == ModelKind::Mlp && cfg.mlp_input == MlpInput::Features);
  in.use_tokens = cfg.model.kind != ModelKind::Mlp || cfg.mlp_input == MlpInput::Embeddings;
  for (const auto* w : tr) {
    if (in.use_features && w->features.size() != static_cast<std::size_t>(kFeatureDim))
      throw ValidationError("window " + w->key.str() + " has no feature vector");
    if (in.use_tokens && w->tokens.empty()) throw ValidationError("window " + w->key.str() + " has no embedding");
  }
  if (in.use_features) {
    std::vector<WindowFeatureVector> train_vecs;
    for (const auto* w : tr) {
      WindowFeatureVector v;
      std::copy(w->features.begin(), w->features.end(), v.values.begin());
      train_vecs.push_back(v);
    }
    in.imputer.fit(train_vecs);
    std::vector<std::vector<double>> rows;
    for (const auto& v : train_vecs) {
      const auto iv = in.imputer.apply(v);
      rows.emplace_back(iv.values.begin(), iv.values.end());
    }
    in.standardizer.fit(rows);
    out.preprocessing = {{"impute_median", in.imputer.medians()},
                         {"standardize_mean", in.standardizer.mean()},
                         {"standardize_sd", in.standardizer.sd()}};
  }

  ModelConfig mc = cfg.model;
  if (mc.kind == ModelKind::Mlp) {
    mc.input_dim = cfg.mlp_input == MlpInput::Features ? kFeatureDim : tr.front()->dim;
  } else {
    mc.input_dim = tr.front()->dim;
    mc.feature_dim = kFeatureDim;
  }
  auto samples = [&](const std::vector<const WindowRecord*>& ws) {
    std::vector<Sample> v;
    v.reserve(ws.size());
    for (const auto* w : ws) v.push_back(in.make(*w, cfg));
    return v;
  };
  const auto train = samples(tr), val = samples(va), test = samples(te);
  out.n_train = train.size();
  out.n_val = val.size();
  out.n_test = test.size();

  Model model(mc);
  model.init(derive_seed(fold_seed, 1));
  TrainConfig tc = cfg.train;
  tc.seed = fold_seed;
  out.fit = fit(model, train, val, tc);
  if (val.empty()) out.fit.warnings.push_back("fold " + std::to_string(fold.fold_id) + ": empty validation cage, last epoch kept");
  out.confusion = ConfusionMatrix(mc.n_classes);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int p = predict(model, test[i]);
    ++out.confusion.at(test[i].label, p);
    out.predictions.push_back({te[i]->key, test[i].label, p});
  }
  out.model = mc;
  out.params = model.params();
  return out;
}

/// Full LOCO run. Fold seeds are derive_seed(seed, fold_id); folds may run
/// on `jobs` threads, and the report is assembled in fold order.
inline RunReport run_loco(const LocoDataset& data, const RunConfig& cfg) {
  RunReport rep;
  rep.config = cfg;
  rep.warnings = data.warnings;
  std::vector<int> cages;
  for (const auto& w : data.windows) cages.push_back(w.cage);
  const auto folds = make_loco_folds(cages, cfg.any_cage_count);
  rep.folds.resize(folds.size());
  std::vector<std::string> errors(folds.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= folds.size()) return;
        i = next++;
      }
      try {
        rep.folds[i] = run_fold(data, folds[i], cfg, derive_seed(cfg.train.seed, static_cast<std::uint64_t>(folds[i].fold_id)));
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int jobs = std::clamp(cfg.jobs, 1, static_cast<int>(folds.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw ValidationError(e);
  std::vector<ConfusionMatrix> mats;
  for (const auto& f : rep.folds) {
    mats.push_back(f.confusion);
    for (const auto& w : f.fit.warnings) rep.warnings.push_back(w);
  }
  rep.eval = evaluate(mats);
  return rep;
}

inline nlohmann::json run_report_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = r.config.to_json();
  j["evaluation"] = eval_report_json(r.eval);
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json jf;
    jf["fold_id"] = f.spec.fold_id;
    jf["test_cage"] = f.spec.test_cage;
    jf["val_cage"] = f.spec.val_cage;
    jf["train_cages"] = f.spec.train_cages;
    jf["n_train"] = f.n_train;
    jf["n_val"] = f.n_val;
    jf["n_test"] = f.n_test;
    jf["class_weights"] = f.fit.class_weights;
    jf["best_epoch"] = f.fit.best_epoch;
    jf["epochs"] = nlohmann::json::array();
    for (const auto& e : f.fit.epochs)
      jf["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    jf["macro_f1"] = f.confusion.total() > 0 ? class_metrics(f.confusion).macro_f1 : 0.0;
    jf["confusion"] = nlohmann::json::array();
    for (int t = 0; t < f.confusion.n; ++t) {
      std::vector<long long> row;
      for (int p = 0; p < f.confusion.n; ++p) row.push_back(f.confusion.at(t, p));
      jf["confusion"].push_back(row);
    }
    j["folds"].push_back(std::move(jf));
  }
  j["warnings"] = r.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  std::string name;
  RunReport report;
  double delta = 0, delta_sd = 0;  // against the base run
};

/// Applies a toggle to a run configuration. Known toggles: epochs=1,
/// no_class_weights, no_label_smoothing, mlp, K=16, K=32, K=48.
inline RunConfig apply_toggle(RunConfig cfg, const std::string& toggle) {
  if (toggle == "epochs=1") cfg.train.epochs = 1;
  else if (toggle == "no_class_weights") cfg.train.class_weights = ClassWeightMode::None;
  else if (toggle == "no_label_smoothing") cfg.train.label_smoothing = 0.0;
  else if (toggle == "mlp") {
    cfg.model.kind = ModelKind::Mlp;
    cfg.mlp_input = MlpInput::Embeddings;
  } else if (toggle == "K=16" || toggle == "K=32" || toggle == "K=48") cfg.model.segments = std::stoi(toggle.substr(2));
  else
    throw UsageError("unknown ablation toggle '" + toggle +
                     "' (expected epochs=1, no_class_weights, no_label_smoothing, mlp, K=16, K=32 or K=48)");
  return cfg;
}

/// Base run plus one run per toggle, all with the same seed and folds. The
/// delta is the difference of aggregated macro-F1 (toggle minus base); its
/// SD is the sample SD of the per-fold macro-F1 differences.
inline std::vector<AblationRow> run_ablation_grid(const LocoDataset& data, const RunConfig& base,
                                                  const std::vector<std::string>& toggles) {
  for (const auto& t : toggles) apply_toggle(base, t);  // validate all before running anything
  std::vector<AblationRow> rows;
  rows.push_back({"base", run_loco(data, base), 0, 0});
  for (const auto& t : toggles) {
    AblationRow row{t, run_loco(data, apply_toggle(base, t)), 0, 0};
    row.delta = row.report.eval.metrics.macro_f1 - rows.front().report.eval.metrics.macro_f1;
    std::vector<double> diffs;
    for (std::size_t i = 0; i < row.report.eval.fold_macro_f1.size(); ++i)
      diffs.push_back(row.report.eval.fold_macro_f1[i] - rows.front().report.eval.fold_macro_f1[i]);
    row.delta_sd = sample_sd(diffs);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"name", r.name},
                 {"macro_f1", r.report.eval.metrics.macro_f1},
                 {"fold_sd", r.report.eval.fold_sd},
                 {"delta", r.delta},
                 {"delta_sd", r.delta_sd}});
  return j;
}

}  // namespace playclass
