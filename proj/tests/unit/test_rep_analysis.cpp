#include <gtest/gtest.h>

#include "playclass/rep_analysis.hpp"

using namespace playclass;

namespace {

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

// Straight from the formula with explicit loops.
double oracle_cka(const DenseRows& x, const DenseRows& y) {
  const auto n = x.rows();
  auto centre = [&](const DenseRows& a) {
    DenseRows c = a;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      double m = 0;
      for (Eigen::Index i = 0; i < n; ++i) m += a(i, j);
      m /= static_cast<double>(n);
      for (Eigen::Index i = 0; i < n; ++i) c(i, j) = a(i, j) - m;
    }
    return c;
  };
  auto frob2 = [&](const DenseRows& a, const DenseRows& b) {
    double s = 0;
    for (Eigen::Index i = 0; i < a.cols(); ++i)
      for (Eigen::Index j = 0; j < b.cols(); ++j) {
        double d = 0;
        for (Eigen::Index r = 0; r < n; ++r) d += a(r, i) * b(r, j);
        s += d * d;
      }
    return s;
  };
  const auto xc = centre(x), yc = centre(y);
  return frob2(yc, xc) / (std::sqrt(frob2(xc, xc)) * std::sqrt(frob2(yc, yc)));
}

std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) ++less;
      if (v == x[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

EmbeddingSequence seq(const std::string& vid, int start, int frames, const std::vector<float>& tokens) {
  EmbeddingSequence s;
  s.key = {vid, 1, start};
  s.frames = frames;
  s.dim = static_cast<int>(tokens.size()) / frames;
  s.tokens = tokens;
  return s;
}

}  // namespace

TEST(Cka, FixedMatricesMatchDirectFormula) {
  DenseRows x(4, 2), y(4, 2);
  x << 1, 2, 3, 1, 0, 5, 2, 2;
  y << 2, 0, 1, 1, 4, 3, -1, 2;
  EXPECT_NEAR(linear_cka(x, y), oracle_cka(x, y), 1e-12);
  // Wide inputs take the Gram route.
  Rng rng(1);
  const auto a = random_rows(rng, 5, 9), b = random_rows(rng, 5, 7);
  EXPECT_NEAR(linear_cka(a, b), oracle_cka(a, b), 1e-12);
}

TEST(Cka, SelfSimilarityInvarianceSymmetryOnRandomPairs) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 6 + static_cast<int>(rng.below(30)), p = 1 + static_cast<int>(rng.below(12)),
              q = 1 + static_cast<int>(rng.below(12));
    const auto x = random_rows(rng, n, p), y = random_rows(rng, n, q);
    const double c = rng.uniform(0.1, 10.0) * (rng.uniform01() < 0.5 ? -1 : 1);
    const double base = linear_cka(x, y);
    EXPECT_NEAR(linear_cka(x, x), 1.0, 1e-12);
    EXPECT_LT(std::abs(base - linear_cka(y, x)), 1e-12);
    const DenseRows xr = c * x * random_orthogonal(rng, p);
    const DenseRows yr = y * random_orthogonal(rng, q) * 3.0;
    EXPECT_LT(std::abs(base - linear_cka(xr, y)), 1e-8);
    EXPECT_LT(std::abs(base - linear_cka(x, yr)), 1e-8);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
  }
}

TEST(Cka, DegenerateRepresentationRejected) {
  DenseRows x = DenseRows::Constant(5, 3, 0.1), y(5, 1);
  y << 1, 2, 3, 4, 5;
  try {
    linear_cka(x, y);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "degenerate representation");
  }
  EXPECT_THROW(linear_cka(y, DenseRows(4, 1)), ValidationError);
}

TEST(Cka, BundleMatrixIsSymmetricWithUnitDiagonal) {
  Rng rng(3);
  std::vector<EmbeddingBundle> bundles(4);
  for (int b = 0; b < 4; ++b)
    for (int w = 0; w < 12; ++w) {
      std::vector<float> t;
      for (int i = 0; i < 3 * (b + 2); ++i) t.push_back(static_cast<float>(rng.normal()));
      bundles[static_cast<std::size_t>(b)].windows.push_back(seq("v", w * kWindowFrames, 3, t));
    }
  bundles[2].windows.pop_back();  // only shared windows are compared
  std::vector<NamedBundle> named;
  for (int b = 0; b < 4; ++b) named.push_back({"b" + std::to_string(b), &bundles[static_cast<std::size_t>(b)]});
  const auto r = cka_matrix(named);
  EXPECT_EQ(r.windows, 11u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(r.matrix[i][i], 1.0, 1e-12);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(r.matrix[i][j], r.matrix[j][i]);
  }
  const auto csv = cka_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "backbone,b0,b1,b2,b3");
}

TEST(Knn, SeparatedClustersAreSelfNeighbours) {
  Rng rng(4);
  DenseRows x(20, 3);
  std::vector<std::string> labels;
  for (int i = 0; i < 20; ++i) {
    const bool a = i < 10;
    x(i, 0) = (a ? 10 : 0) + rng.normal() * 0.01;
    x(i, 1) = (a ? 0 : 10) + rng.normal() * 0.01;
    x(i, 2) = 1;
    labels.push_back(a ? "frolic" : "rest");
  }
  const auto r = knn_probe(x, labels);
  EXPECT_DOUBLE_EQ(r.self_rate("frolic"), 1.0);
  EXPECT_DOUBLE_EQ(r.self_rate("rest"), 1.0);
}

TEST(Knn, TiesGoToSmallestIndex) {
  DenseRows x(4, 2);
  x << 1, 0, 0, 1, 1, 1, 1, 1;  // rows 2 and 3 are duplicates
  const auto nn = nearest_neighbours(x);
  EXPECT_EQ(nn[2], 3u);
  EXPECT_EQ(nn[3], 2u);
  // Row 0 is equidistant to rows 2 and 3: pick 2.
  EXPECT_EQ(nn[0], 2u);
  EXPECT_EQ(nn[1], 2u);
}

TEST(Knn, RandomPointsMatchExhaustiveOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_rows(rng, 50, 4);
    std::vector<std::string> labels;
    for (int i = 0; i < 50; ++i) labels.push_back("l" + std::to_string(rng.below(4)));
    std::map<std::string, std::map<std::string, double>> want;
    std::map<std::string, double> count;
    for (int i = 0; i < 50; ++i) {
      std::vector<double> a(x.row(i).data(), x.row(i).data() + 4);
      double best = 1e300;
      int arg = -1;
      for (int j = 0; j < 50; ++j) {
        if (j == i) continue;
        std::vector<double> b(x.row(j).data(), x.row(j).data() + 4);
        const double d = cosine_distance(a, b);
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      want[labels[static_cast<std::size_t>(i)]][labels[static_cast<std::size_t>(arg)]] += 1;
      count[labels[static_cast<std::size_t>(i)]] += 1;
    }
    const auto r = knn_probe(x, labels);
    for (const auto& [l, row] : want)
      for (const auto& [nb, c] : row) EXPECT_NEAR(r.fractions.at(l).at(nb), c / count[l], 1e-15);
    for (const auto& [l, row] : r.fractions) {
      double s = 0;
      for (const auto& [nb, f] : row) s += f;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Spearman, MonotoneAndReversed) {
  const std::vector<double> x{1, 2, 3}, y{1, 4, 9}, yr{9, 4, 1};
  EXPECT_DOUBLE_EQ(spearman(x, y).rho, 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, yr).rho, -1.0);
  EXPECT_EQ(spearman(x, y).p, 0.0);
}

TEST(Spearman, TiesMatchRankThenPearsonOracle) {
  const std::vector<double> x{1, 2, 2, 3}, y{10, 20, 20, 40};
  EXPECT_EQ(mid_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
  const auto rx = oracle_ranks(x), ry = oracle_ranks(y);
  const double mx = 2.5, my = 2.5;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(spearman(x, y).rho, sxy / std::sqrt(sxx * syy), 1e-12);
}

TEST(Spearman, MonotoneTransformInvarianceAndRankOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.below(40);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.uniform_int(0, 8));
      y[i] = rng.normal();
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) x[0] += 1;
    std::vector<double> fx(n), gy(n);
    for (std::size_t i = 0; i < n; ++i) {
      fx[i] = std::exp(x[i]) - 7;
      gy[i] = -std::pow(y[i], 3);
    }
    const auto a = spearman(x, y), b = spearman(fx, gy);
    EXPECT_NEAR(a.rho, -b.rho, 1e-12);
    EXPECT_NEAR(a.p, b.p, 1e-9);
    EXPECT_EQ(mid_ranks(x), oracle_ranks(x));
  }
}

TEST(Spearman, PValueAndErrors) {
  // rho = 0.5, n = 12: t = 0.5*sqrt(10/0.75) = 1.8257, two-sided p = 0.0979.
  EXPECT_NEAR(spearman_t_pvalue(0.5, 12), 0.09785, 1e-4);
  EXPECT_NEAR(spearman_t_pvalue(0.0, 10), 1.0, 1e-12);
  try {
    spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "undefined correlation");
  }
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), ValidationError);
}

TEST(Spearman, PermutationModeIsSeededAndAgreesRoughly) {
  Rng rng(7);
  std::vector<double> x(60), y(60);
  for (int i = 0; i < 60; ++i) {
    x[i] = rng.normal();
    y[i] = x[i] * 0.3 + rng.normal();
  }
  const auto t = spearman(x, y);
  const auto p1 = spearman(x, y, 2000, 9), p2 = spearman(x, y, 2000, 9);
  EXPECT_EQ(p1.p, p2.p);
  EXPECT_EQ(p1.p_method, "permutation");
  EXPECT_NEAR(p1.p, t.p, 0.03);
}

TEST(Export, RowNormalizedPercentagesUseOneDecimal) {
  EXPECT_EQ(percent_1dp(0.934999999999), "93.5");
  EXPECT_EQ(percent_1dp(0.9349), "93.5");
  EXPECT_EQ(percent_1dp(0.93449), "93.4");
  EXPECT_EQ(percent_1dp(0.0), "0.0");
  const auto m = reconstruct_counts({{93.5, 4.8, 1.7}, {31.2, 66.1, 2.7}, {8.5, 6.7, 84.8}}, {12585, 1345, 585});
  EXPECT_EQ(row_normalized_csv(m),
            "true,other,object,locomotor\n"
            "other,93.5,4.8,1.7\n"
            "object,31.2,66.1,2.7\n"
            "locomotor,8.5,6.7,84.8\n");
  EXPECT_EQ(parse_confusion_csv(confusion_csv(m)), m);
}

TEST(Export, EmbeddingsAreMeanPooled) {
  EmbeddingBundle b;
  b.windows.push_back(seq("v", 0, 2, {1, 2, 3, 6}));
  const auto csv = embeddings_csv(b, {{b.windows[0].key, "rest"}});
  EXPECT_EQ(csv, "window_key,label,e0,e1\nv:1:0,rest,2,4\n");
}
