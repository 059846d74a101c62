#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"

#include "playclass/dataset_io.hpp"
#include "playclass/loco_harness.hpp"
#include "playclass/numeric.hpp"

namespace playclass {

using DenseRows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Linear CKA

namespace detail {

inline DenseRows centered(const DenseRows& x) {
  DenseRows c = x;
  c.rowwise() -= x.colwise().mean();
  return c;
}

inline void require_spread(const DenseRows& raw, const DenseRows& c) {
  const double scale = raw.norm();
  if (scale == 0.0 || c.norm() <= 1e-12 * scale) throw ValidationError("degenerate representation");
}

}  // namespace detail

/// ‖ȲᵀX̄‖²_F / (‖X̄ᵀX̄‖_F ‖ȲᵀȲ‖_F) with column-centred X̄, Ȳ. Uses the n×n
/// Gram form when that is the smaller problem.
inline double linear_cka(const DenseRows& x, const DenseRows& y) {
  if (x.rows() != y.rows()) throw ValidationError("CKA needs the same number of rows in both representations");
  if (x.rows() < 2) throw ValidationError("CKA needs at least 2 rows");
  const DenseRows xc = detail::centered(x), yc = detail::centered(y);
  detail::require_spread(x, xc);
  detail::require_spread(y, yc);
  double cross, xx, yy;
  if (x.rows() < std::max(x.cols(), y.cols())) {
    const DenseRows k = xc * xc.transpose(), l = yc * yc.transpose();
    cross = k.cwiseProduct(l).sum();
    xx = k.norm();
    yy = l.norm();
  } else {
    cross = (yc.transpose() * xc).squaredNorm();
    xx = (xc.transpose() * xc).norm();
    yy = (yc.transpose() * yc).norm();
  }
  return std::clamp(cross / (xx * yy), 0.0, 1.0);
}

/// One row per window: the token mean of each embedding sequence.
inline DenseRows mean_pooled(const std::vector<const EmbeddingSequence*>& seqs) {
  if (seqs.empty()) return {};
  DenseRows out = DenseRows::Zero(static_cast<Eigen::Index>(seqs.size()), seqs.front()->dim);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = *seqs[i];
    if (s.dim != out.cols()) throw ValidationError("window " + s.key.str() + ": embedding width differs within a bundle");
    for (int t = 0; t < s.frames; ++t)
      for (int d = 0; d < s.dim; ++d) out(static_cast<Eigen::Index>(i), d) += s.tokens[static_cast<std::size_t>(t) * s.dim + d];
    out.row(static_cast<Eigen::Index>(i)) /= s.frames;
  }
  return out;
}

struct NamedBundle {
  std::string name;
  const EmbeddingBundle* bundle = nullptr;
};

struct CkaResult {
  std::vector<std::string> names;
  std::vector<std::vector<double>> matrix;
  std::size_t windows = 0;  // windows shared by every bundle
};

/// Pairwise CKA over the windows present in every bundle, mean-pooled per
/// window and aligned by key.
inline CkaResult cka_matrix(const std::vector<NamedBundle>& bundles) {
  if (bundles.empty()) throw ValidationError("CKA needs at least one representation");
  std::map<WindowKey, std::size_t> seen;
  for (const auto& b : bundles)
    for (const auto& w : b.bundle->windows) ++seen[w.key];
  std::vector<WindowKey> shared;
  for (const auto& [k, c] : seen)
    if (c == bundles.size()) shared.push_back(k);
  CkaResult r;
  r.windows = shared.size();
  std::vector<DenseRows> reps;
  for (const auto& b : bundles) {
    r.names.push_back(b.name);
    std::map<WindowKey, const EmbeddingSequence*> idx;
    for (const auto& w : b.bundle->windows) idx[w.key] = &w;
    std::vector<const EmbeddingSequence*> rows;
    for (const auto& k : shared) rows.push_back(idx.at(k));
    reps.push_back(mean_pooled(rows));
  }
  const std::size_t n = bundles.size();
  r.matrix.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) r.matrix[i][j] = r.matrix[j][i] = linear_cka(reps[i], reps[j]);
  return r;
}

inline std::string cka_csv(const CkaResult& r) {
  std::string out = "backbone";
  for (const auto& n : r.names) out += "," + n;
  out += "\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    out += r.names[i];
    for (double v : r.matrix[i]) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// k = 1 nearest-neighbour probing

/// Cosine distance; a zero vector has similarity 0 to everything.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 1.0;
  return 1.0 - ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Index of each point's nearest other point. Distances within 1e-12 of
/// each other count as ties, which go to the smallest index.
inline std::vector<std::size_t> nearest_neighbours(const DenseRows& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw ValidationError("nearest-neighbour probing needs at least 2 windows");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = x.row(static_cast<Eigen::Index>(i)).norm();
  const DenseRows g = x * x.transpose();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double sim = norms[i] == 0 || norms[j] == 0 ? 0.0 : g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / (norms[i] * norms[j]);
      const double d = 1.0 - sim;
      if (d < best - 1e-12) {
        best = d;
        arg = j;
      }
    }
    out[i] = arg;
  }
  return out;
}

struct KnnResult {
  // fine label -> neighbour label -> fraction of that label's windows
  std::map<std::string, std::map<std::string, double>> fractions;
  std::map<std::string, std::size_t> counts;

  double self_rate(const std::string& label) const {
    auto it = fractions.find(label);
    if (it == fractions.end()) return 0.0;
    auto jt = it->second.find(label);
    return jt == it->second.end() ? 0.0 : jt->second;
  }
};

inline KnnResult knn_probe(const DenseRows& x, const std::vector<std::string>& labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ValidationError("one label per window required");
  const auto nn = nearest_neighbours(x);
  KnnResult r;
  std::map<std::string, std::map<std::string, std::size_t>> hits;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.counts[labels[i]];
    ++hits[labels[i]][labels[nn[i]]];
  }
  for (const auto& [label, row] : hits)
    for (const auto& [nb, c] : row) r.fractions[label][nb] = static_cast<double>(c) / static_cast<double>(r.counts[label]);
  return r;
}

inline std::string knn_csv(const KnnResult& r) {
  std::string out = "fine_label,neighbour_label,fraction\n";
  for (const auto& [label, row] : r.fractions)
    for (const auto& [nb, f] : row) out += csv_field(label) + "," + csv_field(nb) + "," + format_double(f) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Spearman correlation

/// 1-based ranks with ties given the mean of the ranks they span.
inline std::vector<double> mid_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw ValidationError("undefined correlation");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct SpearmanResult {
  double rho = 0, p = 1;
  std::size_t n = 0;
  std::string p_method = "t";
};

/// Two-sided p from the t approximation with n-2 degrees of freedom.
inline double spearman_t_pvalue(double rho, std::size_t n) {
  if (std::abs(rho) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  const double t = rho * std::sqrt(df / (1.0 - rho * rho));
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

/// With `permutations` > 0 the p-value instead comes from shuffling y:
/// (1 + #{|ρ*| ≥ |ρ|}) / (1 + permutations).
inline SpearmanResult spearman(std::span<const double> x, std::span<const double> y, std::size_t permutations = 0,
                               std::uint64_t seed = 0) {
  if (x.size() != y.size()) throw ValidationError("spearman needs equal-length inputs");
  if (x.size() < 3) throw ValidationError("spearman needs at least 3 observations");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("spearman inputs must be finite");
  const auto rx = mid_ranks(x);
  auto ry = mid_ranks(y);
  SpearmanResult r;
  r.n = x.size();
  r.rho = pearson(rx, ry);
  if (permutations == 0) {
    r.p = spearman_t_pvalue(r.rho, r.n);
    return r;
  }
  Rng rng(seed);
  std::size_t extreme = 0;
  for (std::size_t k = 0; k < permutations; ++k) {
    rng.shuffle(ry);
    if (std::abs(pearson(rx, ry)) >= std::abs(r.rho) - 1e-12) ++extreme;
  }
  r.p = static_cast<double>(1 + extreme) / static_cast<double>(1 + permutations);
  r.p_method = "permutation";
  return r;
}

inline nlohmann::json spearman_json(const SpearmanResult& r) {
  return {{"rho", r.rho}, {"p", r.p}, {"n", r.n}, {"p_method", r.p_method}};
}

// ---------------------------------------------------------------------------
// Exports

/// Percentage with one decimal, rounding half away from zero after a 1e-9
/// nudge so values printed as 0.93499999… land on 93.5.
inline std::string percent_1dp(double fraction) {
  const double tenths = std::round(fraction * 1000.0 + (fraction >= 0 ? 1e-9 : -1e-9));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", tenths / 10.0);
  return buf;
}

/// Each row divided by its support, as one-decimal percentages. Empty rows
/// print as 0.0.
inline std::string row_normalized_csv(const ConfusionMatrix& m) {
  std::string out = "true";
  for (int p = 0; p < m.n; ++p) out += std::string(",") + (m.n == kNumClasses ? kClassNames[static_cast<std::size_t>(p)] : std::to_string(p).c_str());
  out += "\n";
  for (int t = 0; t < m.n; ++t) {
    out += m.n == kNumClasses ? kClassNames[static_cast<std::size_t>(t)] : std::to_string(t);
    const long long row = m.row_sum(t);
    for (int p = 0; p < m.n; ++p)
      out += "," + percent_1dp(row > 0 ? static_cast<double>(m.at(t, p)) / static_cast<double>(row) : 0.0);
    out += "\n";
  }
  return out;
}

/// Mean-pooled window embeddings for external projection.
inline std::string embeddings_csv(const EmbeddingBundle& b, const std::map<WindowKey, std::string>& labels = {}) {
  std::string out = "window_key,label";
  const int dim = b.dim();
  for (int d = 0; d < dim; ++d) out += ",e" + std::to_string(d);
  out += "\n";
  for (const auto& w : b.windows) {
    const auto row = mean_pooled({&w});
    auto it = labels.find(w.key);
    out += csv_field(w.key.str()) + "," + (it == labels.end() ? "" : csv_field(it->second));
    for (int d = 0; d < dim; ++d) out += "," + format_double(row(0, d));
    out += "\n";
  }
  return out;
}

}  // namespace playclass
