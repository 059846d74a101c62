#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "playclass/dataset_io.hpp"
#include "playclass/error.hpp"
#include "playclass/numeric.hpp"

namespace playclass {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

// ---------------------------------------------------------------------------
// Pooling

/// Segment i averages rows [floor(i*F/K), floor((i+1)*F/K)). With F < K some
/// segments are empty: they copy the nearest preceding non-empty segment, or
/// the first non-empty one when nothing precedes them.
inline std::vector<double> adaptive_avg_pool(const std::vector<double>& tokens, int frames, int dim, int k) {
  if (frames < 1 || dim < 1 || k < 1) throw ValidationError("adaptive_avg_pool: empty input or K < 1");
  if (tokens.size() != static_cast<std::size_t>(frames) * dim)
    throw ValidationError("adaptive_avg_pool: token count does not match F_w*D");
  std::vector<double> out(static_cast<std::size_t>(k) * dim, 0.0);
  std::vector<char> filled(static_cast<std::size_t>(k), 0);
  for (int i = 0; i < k; ++i) {
    const int lo = static_cast<int>(static_cast<std::int64_t>(i) * frames / k);
    const int hi = static_cast<int>(static_cast<std::int64_t>(i + 1) * frames / k);
    if (hi <= lo) continue;
    for (int t = lo; t < hi; ++t)
      for (int d = 0; d < dim; ++d)
        out[static_cast<std::size_t>(i) * dim + d] += tokens[static_cast<std::size_t>(t) * dim + d];
    for (int d = 0; d < dim; ++d) out[static_cast<std::size_t>(i) * dim + d] /= hi - lo;
    filled[static_cast<std::size_t>(i)] = 1;
  }
  int first = 0;
  while (!filled[static_cast<std::size_t>(first)]) ++first;
  for (int i = 0; i < k; ++i) {
    if (filled[static_cast<std::size_t>(i)]) continue;
    const int src = i < first ? first : i - 1;  // i - 1 is filled by now
    std::copy_n(out.begin() + static_cast<std::ptrdiff_t>(src) * dim, dim, out.begin() + static_cast<std::ptrdiff_t>(i) * dim);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class ModelKind { Mlp, Cnn, Hybrid };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Cnn: return "cnn";
    case ModelKind::Hybrid: return "hybrid";
  }
  return "cnn";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "cnn") return ModelKind::Cnn;
  if (s == "hybrid") return ModelKind::Hybrid;
  throw UsageError("unknown model variant '" + s + "' (expected mlp, cnn or hybrid)");
}

/// The MLP reads Sample::features (a mean-pooled embedding or the
/// handcrafted vector); the CNN reads Sample::tokens (K x input_dim); the
/// hybrid reads both, with features of width feature_dim.
struct ModelConfig {
  ModelKind kind = ModelKind::Cnn;
  int input_dim = 0;
  int segments = 32;  // K
  int bottleneck = 256;
  int conv_channels = 256;
  int kernel = 3;
  int attention_dim = 128;
  int mlp_hidden = 256;
  int feature_dim = kFeatureDim;
  int n_classes = kNumClasses;

  void validate() const {
    if (input_dim < 1) throw ValidationError("model: input_dim must be >= 1");
    if (n_classes < 2) throw ValidationError("model: n_classes must be >= 2");
    if (kind == ModelKind::Mlp) {
      if (mlp_hidden < 1) throw ValidationError("model: mlp_hidden must be >= 1");
      return;
    }
    if (segments < 1) throw ValidationError("model: K must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ValidationError("model: conv kernel must be odd");
    if (bottleneck < 1 || conv_channels < 1 || attention_dim < 1) throw ValidationError("model: widths must be >= 1");
    if (kind == ModelKind::Hybrid && feature_dim < 1) throw ValidationError("model: hybrid needs feature_dim >= 1");
  }

  nlohmann::json to_json() const {
    return {{"kind", model_kind_name(kind)}, {"input_dim", input_dim},        {"K", segments},
            {"bottleneck", bottleneck},     {"conv_channels", conv_channels}, {"kernel", kernel},
            {"attention_dim", attention_dim}, {"mlp_hidden", mlp_hidden},    {"feature_dim", feature_dim},
            {"n_classes", n_classes}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.input_dim = j.at("input_dim").get<int>();
    c.segments = j.at("K").get<int>();
    c.bottleneck = j.at("bottleneck").get<int>();
    c.conv_channels = j.at("conv_channels").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.attention_dim = j.at("attention_dim").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.feature_dim = j.at("feature_dim").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct TensorSpec {
  std::string name;
  int rows = 0, cols = 0;
  int fan_in = 1;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// All weights of one model in a single flat vector.
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int c = cfg_.n_classes;
    if (cfg_.kind == ModelKind::Mlp) {
      add("hidden.weight", cfg_.mlp_hidden, cfg_.input_dim, cfg_.input_dim);
      add("hidden.bias", cfg_.mlp_hidden, 1, cfg_.input_dim);
      add("head.weight", c, cfg_.mlp_hidden, cfg_.mlp_hidden);
      add("head.bias", c, 1, cfg_.mlp_hidden);
    } else {
      const int h = cfg_.bottleneck, hc = cfg_.conv_channels, a = cfg_.attention_dim;
      const int z = hc + (cfg_.kind == ModelKind::Hybrid ? cfg_.feature_dim : 0);
      add("bottleneck.weight", h, cfg_.input_dim, cfg_.input_dim);
      add("bottleneck.bias", h, 1, cfg_.input_dim);
      add("conv.weight", hc, cfg_.kernel * h, cfg_.kernel * h);  // [out][tap][in]
      add("conv.bias", hc, 1, cfg_.kernel * h);
      add("attention.V", a, hc, hc);
      add("attention.U", a, hc, hc);
      add("attention.w", a, 1, a);
      add("head.weight", c, z, z);
      add("head.bias", c, 1, z);
    }
    params_.assign(total_, 0.0);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorSpec>& tensors() const { return specs_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t size() const { return total_; }

  const TensorSpec& spec(const std::string& name) const {
    for (const auto& s : specs_)
      if (s.name == name) return s;
    throw ValidationError("model has no tensor " + name);
  }
  ConstMatMap mat(std::size_t i) const {
    return {params_.data() + specs_[i].offset, specs_[i].rows, specs_[i].cols};
  }
  ConstVecMap vec(std::size_t i) const {
    return {params_.data() + specs_[i].offset, static_cast<Eigen::Index>(specs_[i].size())};
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& s : specs_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      for (std::size_t i = 0; i < s.size(); ++i) params_[s.offset + i] = rng.uniform(-bound, bound);
    }
  }

 private:
  void add(const std::string& name, int rows, int cols, int fan_in) {
    specs_.push_back({name, rows, cols, fan_in, total_});
    total_ += static_cast<std::size_t>(rows) * cols;
  }

  ModelConfig cfg_;
  std::vector<TensorSpec> specs_;
  std::vector<double> params_;
  std::size_t total_ = 0;
};

// Tensor slots in declaration order.
namespace slot {
inline constexpr std::size_t kMlpHiddenW = 0, kMlpHiddenB = 1, kMlpHeadW = 2, kMlpHeadB = 3;
inline constexpr std::size_t kBottleW = 0, kBottleB = 1, kConvW = 2, kConvB = 3, kAttnV = 4, kAttnU = 5, kAttnW = 6,
                             kHeadW = 7, kHeadB = 8;
}  // namespace slot

// ---------------------------------------------------------------------------
// Forward / backward

struct Sample {
  std::vector<double> tokens;    // K x input_dim, row-major (CNN, hybrid)
  std::vector<double> features;  // MLP input, or hybrid feature vector
  int label = 0;
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi);
}

struct ForwardCache {
  RowMat pre1, act1;   // MLP: 1 x hidden; CNN: K x bottleneck
  RowMat patches;      // K x (kernel * bottleneck)
  RowMat conv;         // K x conv_channels
  RowMat gate_v, gate_u;
  Eigen::VectorXd attn;  // K
  Eigen::VectorXd z;     // head input
  Eigen::VectorXd logits;
};

namespace detail {
inline void check_width(std::size_t got, std::size_t want, const char* layer) {
  if (got != want)
    throw ValidationError(std::string("shape mismatch at layer ") + layer + ": expected " + std::to_string(want) +
                          " inputs, got " + std::to_string(got));
}
}  // namespace detail

inline Eigen::VectorXd forward(const Model& m, const Sample& s, ForwardCache& c) {
  const auto& cfg = m.config();
  if (cfg.kind == ModelKind::Mlp) {
    detail::check_width(s.features.size(), static_cast<std::size_t>(cfg.input_dim), "hidden");
    const ConstVecMap x(s.features.data(), cfg.input_dim);
    c.pre1 = (m.mat(slot::kMlpHiddenW) * x + m.vec(slot::kMlpHiddenB)).transpose();
    c.act1 = c.pre1.unaryExpr([](double v) { return gelu(v); });
    c.z = c.act1.transpose();
    c.logits = m.mat(slot::kMlpHeadW) * c.z + m.vec(slot::kMlpHeadB);
    return c.logits;
  }
  const int k = cfg.segments, h = cfg.bottleneck, hc = cfg.conv_channels, pad = cfg.kernel / 2;
  detail::check_width(s.tokens.size(), static_cast<std::size_t>(k) * cfg.input_dim, "bottleneck");
  const ConstMatMap x(s.tokens.data(), k, cfg.input_dim);
  c.pre1 = x * m.mat(slot::kBottleW).transpose();
  c.pre1.rowwise() += m.vec(slot::kBottleB).transpose();
  c.act1 = c.pre1.unaryExpr([](double v) { return gelu(v); });
  c.patches = RowMat::Zero(k, cfg.kernel * h);
  for (int t = 0; t < k; ++t)
    for (int tap = 0; tap < cfg.kernel; ++tap) {
      const int src = t + tap - pad;
      if (src >= 0 && src < k) c.patches.block(t, tap * h, 1, h) = c.act1.row(src);
    }
  c.conv = c.patches * m.mat(slot::kConvW).transpose();
  c.conv.rowwise() += m.vec(slot::kConvB).transpose();
  c.gate_v = (c.conv * m.mat(slot::kAttnV).transpose()).array().tanh();
  c.gate_u = (c.conv * m.mat(slot::kAttnU).transpose()).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const Eigen::VectorXd score = c.gate_v.cwiseProduct(c.gate_u) * m.vec(slot::kAttnW);
  c.attn = (score.array() - score.maxCoeff()).exp();
  c.attn /= c.attn.sum();
  const Eigen::VectorXd pooled = c.conv.transpose() * c.attn;
  if (cfg.kind == ModelKind::Hybrid) {
    detail::check_width(s.features.size(), static_cast<std::size_t>(cfg.feature_dim), "head (hybrid features)");
    c.z.resize(hc + cfg.feature_dim);
    c.z << pooled, ConstVecMap(s.features.data(), cfg.feature_dim);
  } else {
    c.z = pooled;
  }
  c.logits = m.mat(slot::kHeadW) * c.z + m.vec(slot::kHeadB);
  return c.logits;
}

inline Eigen::VectorXd forward(const Model& m, const Sample& s) {
  ForwardCache c;
  return forward(m, s, c);
}

/// Adds d(loss)/d(params) for one sample to `grad` given d(loss)/d(logits).
inline void backward(const Model& m, const ForwardCache& c, const Sample& s, const Eigen::VectorXd& dlogits,
                     std::vector<double>& grad) {
  const auto& cfg = m.config();
  const auto& sp = m.tensors();
  auto g_mat = [&](std::size_t i) { return MatMap(grad.data() + sp[i].offset, sp[i].rows, sp[i].cols); };
  auto g_vec = [&](std::size_t i) { return VecMap(grad.data() + sp[i].offset, static_cast<Eigen::Index>(sp[i].size())); };
  if (cfg.kind == ModelKind::Mlp) {
    g_mat(slot::kMlpHeadW).noalias() += dlogits * c.z.transpose();
    g_vec(slot::kMlpHeadB) += dlogits;
    const Eigen::VectorXd dh = m.mat(slot::kMlpHeadW).transpose() * dlogits;
    Eigen::VectorXd dpre(dh.size());
    for (Eigen::Index i = 0; i < dh.size(); ++i) dpre[i] = dh[i] * gelu_grad(c.pre1(0, i));
    const ConstVecMap x(s.features.data(), cfg.input_dim);
    g_mat(slot::kMlpHiddenW).noalias() += dpre * x.transpose();
    g_vec(slot::kMlpHiddenB) += dpre;
    return;
  }
  const int k = cfg.segments, h = cfg.bottleneck, hc = cfg.conv_channels, pad = cfg.kernel / 2;
  g_mat(slot::kHeadW).noalias() += dlogits * c.z.transpose();
  g_vec(slot::kHeadB) += dlogits;
  const Eigen::VectorXd dz = (m.mat(slot::kHeadW).transpose() * dlogits).head(hc);

  // pooled = conv^T a
  RowMat dconv = c.attn * dz.transpose();
  const Eigen::VectorXd da = c.conv * dz;
  const Eigen::VectorXd dscore = c.attn.cwiseProduct((da.array() - c.attn.dot(da)).matrix());
  // score = (gate_v . gate_u) w
  const RowMat gate = c.gate_v.cwiseProduct(c.gate_u);
  g_vec(slot::kAttnW).noalias() += gate.transpose() * dscore;
  const RowMat dgate = dscore * m.vec(slot::kAttnW).transpose();
  const RowMat dpre_v = dgate.cwiseProduct(c.gate_u).cwiseProduct((1.0 - c.gate_v.array().square()).matrix());
  const RowMat dpre_u =
      dgate.cwiseProduct(c.gate_v).cwiseProduct(c.gate_u.cwiseProduct((1.0 - c.gate_u.array()).matrix()));
  g_mat(slot::kAttnV).noalias() += dpre_v.transpose() * c.conv;
  g_mat(slot::kAttnU).noalias() += dpre_u.transpose() * c.conv;
  dconv.noalias() += dpre_v * m.mat(slot::kAttnV) + dpre_u * m.mat(slot::kAttnU);

  g_mat(slot::kConvW).noalias() += dconv.transpose() * c.patches;
  g_vec(slot::kConvB) += dconv.colwise().sum().transpose();
  const RowMat dpatches = dconv * m.mat(slot::kConvW);
  RowMat dact = RowMat::Zero(k, h);
  for (int t = 0; t < k; ++t)
    for (int tap = 0; tap < cfg.kernel; ++tap) {
      const int src = t + tap - pad;
      if (src >= 0 && src < k) dact.row(src) += dpatches.block(t, tap * h, 1, h);
    }
  for (int t = 0; t < k; ++t)
    for (int j = 0; j < h; ++j) dact(t, j) *= gelu_grad(c.pre1(t, j));
  const ConstMatMap x(s.tokens.data(), k, cfg.input_dim);
  g_mat(slot::kBottleW).noalias() += dact.transpose() * x;
  g_vec(slot::kBottleB) += dact.colwise().sum().transpose();
}

// ---------------------------------------------------------------------------
// Loss

enum class ClassWeightMode { InvSqrt, None };

/// inv_sqrt: w_c proportional to 1/sqrt(n_c), normalized to mean 1. A class
/// absent from the counts is treated as count 1 with a warning.
inline std::vector<double> class_weights(const std::vector<std::size_t>& counts, ClassWeightMode mode,
                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<double> w(counts.size(), 1.0);
  if (mode == ClassWeightMode::None) return w;
  double sum = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::size_t n = counts[c];
    if (n == 0) {
      n = 1;
      if (warnings) warnings->push_back("class " + std::to_string(c) + " absent from training split; weight uses count 1");
    }
    w[c] = 1.0 / std::sqrt(static_cast<double>(n));
    sum += w[c];
  }
  for (auto& x : w) x *= static_cast<double>(counts.size()) / sum;
  return w;
}

/// Smoothed target t_c = (1 - alpha) [c == y] + alpha / C.
inline std::vector<double> smoothed_target(int y, int n_classes, double alpha) {
  std::vector<double> t(static_cast<std::size_t>(n_classes), alpha / n_classes);
  t[static_cast<std::size_t>(y)] += 1.0 - alpha;
  return t;
}

/// Unnormalized per-sample loss w_y * CE(smoothed target, softmax(logits))
/// and its gradient with respect to the logits.
inline double sample_loss(const Eigen::VectorXd& logits, int y, double weight, double alpha, Eigen::VectorXd* dlogits) {
  const int c = static_cast<int>(logits.size());
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const auto t = smoothed_target(y, c, alpha);
  double loss = 0;
  for (int i = 0; i < c; ++i) loss -= t[static_cast<std::size_t>(i)] * (logits[i] - lse);
  if (dlogits) {
    dlogits->resize(c);
    for (int i = 0; i < c; ++i) (*dlogits)[i] = weight * (std::exp(logits[i] - lse) - t[static_cast<std::size_t>(i)]);
  }
  return weight * loss;
}

struct LossConfig {
  std::vector<double> class_weights;  // empty = uniform
  double label_smoothing = 0.1;

  double weight(int y) const { return class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)]; }
};

/// Batch loss sum_i w_i l_i / sum_i w_i; when `grad` is given it receives
/// the gradient of that loss (zeroed first).
inline double batch_loss(const Model& m, const std::vector<Sample>& data, const std::vector<std::size_t>& idx,
                         const LossConfig& lc, std::vector<double>* grad) {
  if (grad) grad->assign(m.size(), 0.0);
  if (idx.empty()) return 0.0;
  double wsum = 0;
  for (std::size_t i : idx) wsum += lc.weight(data[i].label);
  if (!(wsum > 0)) throw ValidationError("batch has zero total class weight");
  double total = 0;
  ForwardCache cache;
  Eigen::VectorXd dl;
  for (std::size_t i : idx) {
    const auto& s = data[i];
    if (s.label < 0 || s.label >= m.config().n_classes) throw ValidationError("sample label out of range");
    forward(m, s, cache);
    total += sample_loss(cache.logits, s.label, lc.weight(s.label), lc.label_smoothing, grad ? &dl : nullptr);
    if (grad) {
      dl /= wsum;
      backward(m, cache, s, dl, *grad);
    }
  }
  return total / wsum;
}

inline int predict(const Model& m, const Sample& s) {
  const auto logits = forward(m, s);
  Eigen::Index best = 0;
  logits.maxCoeff(&best);  // first maximum on ties
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
};

struct AdamWState {
  std::vector<double> m, v;
  long long t = 0;
};

/// One step with decoupled weight decay:
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p.
inline void adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamWState& st,
                       const AdamWConfig& cfg) {
  if (grads.size() != params.size()) throw ValidationError("adamw: gradient size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw ValidationError("adamw: non-finite gradient, step rejected");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
    params[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps)) + cfg.lr * cfg.weight_decay * params[i];
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 5;
  int batch_size = 64;
  AdamWConfig optimizer;
  double label_smoothing = 0.1;
  ClassWeightMode class_weights = ClassWeightMode::InvSqrt;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
    if (!(optimizer.lr > 0)) throw ValidationError("train: lr must be > 0");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ValidationError("train: label smoothing must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", optimizer.lr},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"eps", optimizer.eps},
            {"weight_decay", optimizer.weight_decay},
            {"label_smoothing", label_smoothing},
            {"class_weights", class_weights == ClassWeightMode::InvSqrt ? "inv_sqrt" : "none"},
            {"seed", seed}};
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;  // weighted mean over the epoch's batches
  double val_loss = 0;
};

struct FitResult {
  double initial_train_loss = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::vector<double> class_weights;
  std::vector<std::string> warnings;
};

/// Trains with AdamW, evaluating the validation loss after every epoch, and
/// leaves the model at the epoch with the lowest validation loss (ties go to
/// the earlier epoch). Without validation data the last epoch is kept.
inline FitResult fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training split is empty");
  FitResult out;
  std::vector<std::size_t> counts(static_cast<std::size_t>(model.config().n_classes), 0);
  for (const auto& s : train) {
    if (s.label < 0 || s.label >= model.config().n_classes) throw ValidationError("sample label out of range");
    ++counts[static_cast<std::size_t>(s.label)];
  }
  out.class_weights = class_weights(counts, cfg.class_weights, &out.warnings);
  const LossConfig lc{out.class_weights, cfg.label_smoothing};

  std::vector<std::size_t> order(train.size()), val_idx(val.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::iota(val_idx.begin(), val_idx.end(), std::size_t{0});
  out.initial_train_loss = batch_loss(model, train, order, lc, nullptr);

  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  AdamWState opt;
  std::vector<double> grad, best_params = model.params();
  double best_val = std::numeric_limits<double>::infinity();
  for (int e = 1; e <= cfg.epochs; ++e) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0, weight_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(order.size(), start + cfg.batch_size)));
      double bw = 0;
      for (std::size_t i : batch) bw += lc.weight(train[i].label);
      loss_sum += batch_loss(model, train, batch, lc, &grad) * bw;
      weight_sum += bw;
      adamw_step(model.params(), grad, opt, cfg.optimizer);
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.train_loss = loss_sum / weight_sum;
    rec.val_loss = val.empty() ? rec.train_loss : batch_loss(model, val, val_idx, lc, nullptr);
    out.epochs.push_back(rec);
    if (val.empty() ? e == cfg.epochs : rec.val_loss < best_val) {
      best_val = rec.val_loss;
      out.best_epoch = e;
      best_params = model.params();
    }
  }
  model.params() = best_params;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "PLAYCKPT", u32 version, u64 length + JSON header (model
// config and caller metadata), then for every tensor in declaration order
// u64 count + little-endian float64 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}
template <class T>
T get_le(const std::string& in, std::size_t& at) {
  if (at + sizeof(T) > in.size()) throw ValidationError("checkpoint truncated at byte offset " + std::to_string(at));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  at += sizeof(T);
  return v;
}
}  // namespace detail

inline std::string serialize_checkpoint(const Model& m, const nlohmann::json& meta = nlohmann::json::object()) {
  std::string out = "PLAYCKPT";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  nlohmann::json header{{"model", m.config().to_json()}, {"meta", meta}};
  const std::string h = header.dump();
  detail::put_le<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& s : m.tensors()) {
    detail::put_le<std::uint64_t>(out, s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m.params()[s.offset + i]));
  }
  return out;
}

struct Checkpoint {
  Model model;
  nlohmann::json meta;
};

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, 8, "PLAYCKPT") != 0) throw ValidationError("not a checkpoint file (bad magic)");
  std::size_t at = 8;
  const auto version = detail::get_le<std::uint32_t>(bytes, at);
  if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::get_le<std::uint64_t>(bytes, at);
  if (at + hlen > bytes.size()) throw ValidationError("checkpoint truncated in header");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(at, hlen));
    ck.model = Model(ModelConfig::from_json(header.at("model")));
    ck.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
  at += hlen;
  for (const auto& s : ck.model.tensors()) {
    const auto n = detail::get_le<std::uint64_t>(bytes, at);
    if (n != s.size()) throw ValidationError("checkpoint tensor " + s.name + " has wrong size");
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, at));
      if (!std::isfinite(v)) throw ValidationError("checkpoint tensor " + s.name + " holds a non-finite value");
      ck.model.params()[s.offset + i] = v;
    }
  }
  if (at != bytes.size()) throw ValidationError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& p, const Model& m, const nlohmann::json& meta = nlohmann::json::object()) {
  write_file_atomic(p, serialize_checkpoint(m, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) { return parse_checkpoint(read_file(p)); }

/// One JSON line per epoch.
inline std::string run_log_jsonl(const FitResult& r, const nlohmann::json& tag = nlohmann::json::object()) {
  std::string out;
  for (const auto& e : r.epochs) {
    nlohmann::json j = tag;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["selected"] = e.epoch == r.best_epoch;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace playclass
