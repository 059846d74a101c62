#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include "playclass/error.hpp"

namespace playclass {

/// Row-major dense matrix.
struct DenseMatrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
  DenseMatrix(std::initializer_list<std::initializer_list<double>> nested)
      : DenseMatrix(std::vector<std::vector<double>>(nested.begin(), nested.end())) {}
  explicit DenseMatrix(const std::vector<std::vector<double>>& nested) {
    rows = static_cast<int>(nested.size());
    cols = rows ? static_cast<int>(nested[0].size()) : 0;
    for (const auto& r : nested) {
      if (static_cast<int>(r.size()) != cols) throw ValidationError("ragged matrix");
      data.insert(data.end(), r.begin(), r.end());
    }
  }

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

struct Assignment {
  std::vector<int> row_to_col;  // -1 = unassigned
  double total = 0;

  int size() const {
    return static_cast<int>(std::count_if(row_to_col.begin(), row_to_col.end(), [](int c) { return c >= 0; }));
  }
  std::vector<std::pair<int, int>> pairs() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < row_to_col.size(); ++i)
      if (row_to_col[i] >= 0) out.emplace_back(static_cast<int>(i), row_to_col[i]);
    return out;
  }
};

namespace detail {

inline bool forbidden_entry(double c, bool maximize) {
  if (std::isnan(c)) throw ValidationError("assignment cost is NaN");
  if (maximize && c == std::numeric_limits<double>::infinity())
    throw ValidationError("+inf cost under maximize");
  if (!maximize && c == -std::numeric_limits<double>::infinity())
    throw ValidationError("-inf cost under minimize");
  return std::isinf(c);
}

// Shortest-augmenting-path Hungarian method on an n x m cost (n <= m),
// minimizing. Returns the column of each row.
inline std::vector<int> solve_min_rows_le_cols(const DenseMatrix& a) {
  const int n = a.rows, m = a.cols;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] > 0) col_of[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return col_of;
}

// Optimal assignment without the lexicographic tie-break. Forbidden entries
// are priced so that using one is never worth it; pairs on them are dropped,
// which maximizes the number of allowed pairs first and the total second.
inline Assignment solve_raw(const DenseMatrix& cost, bool maximize) {
  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(cost.rows), -1);
  if (cost.rows == 0 || cost.cols == 0) return out;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double c : cost.data)
    if (!forbidden_entry(c, maximize)) {
      const double w = maximize ? -c : c;
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
  if (lo > hi) return out;  // everything forbidden
  const bool transpose = cost.rows > cost.cols;
  const int n = transpose ? cost.cols : cost.rows, m = transpose ? cost.rows : cost.cols;
  const double big = (hi - lo + 1) * (n + 1);
  DenseMatrix w(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double c = transpose ? cost(j, i) : cost(i, j);
      w(i, j) = std::isinf(c) ? big : (maximize ? -c : c) - lo;
    }
  const auto col_of = solve_min_rows_le_cols(w);
  for (int i = 0; i < n; ++i) {
    const int j = col_of[static_cast<std::size_t>(i)];
    if (j < 0) continue;
    const int r = transpose ? j : i, c = transpose ? i : j;
    if (std::isinf(cost(r, c))) continue;
    out.row_to_col[static_cast<std::size_t>(r)] = c;
    out.total += cost(r, c);
  }
  return out;
}

}  // namespace detail

/// Matrices at most this large (in rows and in columns) get the exact
/// lexicographic tie-break; larger ones keep the solver's own choice.
inline constexpr int kLexicographicTieBreakLimit = 32;

/// Optimal assignment on a rectangular matrix. Infinite entries on the wrong
/// side (-inf when maximizing, +inf when minimizing) are forbidden; the result
/// has as many allowed pairs as possible and, among those, the optimal total.
/// Among optimal assignments the one whose row_to_col vector is
/// lexicographically smallest wins, with "unassigned" ordered after every
/// column.
inline Assignment hungarian(const DenseMatrix& cost, bool maximize) {
  Assignment best = detail::solve_raw(cost, maximize);
  const int n = cost.rows, m = cost.cols;
  if (n == 0 || m == 0 || n > kLexicographicTieBreakLimit || m > kLexicographicTieBreakLimit) return best;

  double scale = 1;
  for (double c : cost.data)
    if (!std::isinf(c)) scale = std::max(scale, std::abs(c));
  const double tol = 1e-9 * scale * (std::min(n, m) + 1);
  const int target_size = best.size();
  const double target = best.total;

  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  std::vector<char> col_used(static_cast<std::size_t>(m), 0);
  int fixed_size = 0;
  double fixed_total = 0;
  for (int i = 0; i < n; ++i) {
    // Rows after i and unused columns form the remaining subproblem.
    std::vector<int> free_cols;
    for (int j = 0; j < m; ++j)
      if (!col_used[static_cast<std::size_t>(j)]) free_cols.push_back(j);
    auto rest_optimum = [&](int skip_col) {
      std::vector<int> cols;
      for (int j : free_cols)
        if (j != skip_col) cols.push_back(j);
      DenseMatrix sub(n - i - 1, static_cast<int>(cols.size()));
      for (int r = 0; r < sub.rows; ++r)
        for (int c = 0; c < sub.cols; ++c) sub(r, c) = cost(i + 1 + r, cols[static_cast<std::size_t>(c)]);
      const auto a = detail::solve_raw(sub, maximize);
      return std::pair<int, double>{a.size(), a.total};
    };
    int chosen = -1;
    for (int j : free_cols) {
      const double c = cost(i, j);
      if (std::isinf(c)) continue;
      const auto [sz, tot] = rest_optimum(j);
      if (fixed_size + 1 + sz == target_size && std::abs(fixed_total + c + tot - target) <= tol) {
        chosen = j;
        break;
      }
    }
    out.row_to_col[static_cast<std::size_t>(i)] = chosen;
    if (chosen >= 0) {
      col_used[static_cast<std::size_t>(chosen)] = 1;
      ++fixed_size;
      fixed_total += cost(i, chosen);
    }
  }
  if (fixed_size != target_size) return best;  // numerical trouble: keep the raw optimum
  out.total = 0;
  for (int i = 0; i < n; ++i)
    if (out.row_to_col[static_cast<std::size_t>(i)] >= 0) out.total += cost(i, out.row_to_col[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace playclass
