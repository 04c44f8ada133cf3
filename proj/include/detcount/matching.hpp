// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file matching.hpp
 * @brief Threshold-gated minimum-cost bipartite matching of keypoints.
 *
 * Cells whose distance exceeds the threshold are forbidden inside the
 * assignment itself. The solver first maximizes the number of allowed pairs,
 * then minimizes their total cost; among equal optima it returns the
 * assignment whose padded column vector (row 0 first, dummy columns after
 * real ones) is lexicographically smallest.
 */

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "detcount/geometry.hpp"

namespace detcount {

inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

/// Dense row-major cost matrix; kForbidden marks cells that may not be paired.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), cost_(rows * cols, fill) {}

  CostMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    cost_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw std::invalid_argument("ragged cost matrix");
      cost_.insert(cost_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return cost_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return cost_[r * cols_ + c]; }
  bool forbidden(std::size_t r, std::size_t c) const { return std::isinf((*this)(r, c)); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> cost_;
};

using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;

namespace detail {

class SquareAssignment {
 public:
  explicit SquareAssignment(const CostMatrix& m) : rows_(m.rows()), cols_(m.cols()) {
    n_ = std::max(rows_, cols_);
    double max_finite = 0.0;
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) {
        const double v = m(r, c);
        if (std::isnan(v) || v < 0.0) throw std::invalid_argument("cost entries must be >= 0");
        if (!std::isinf(v)) max_finite = std::max(max_finite, v);
      }
    // Any single forbidden cell outweighs every all-allowed assignment.
    const double big = 2.0 * (static_cast<double>(n_) * max_finite + 1.0);
    tol_ = 1e-11 * (1.0 + static_cast<double>(n_) * big);
    a_.assign(n_ * n_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) a_[r * n_ + c] = m.forbidden(r, c) ? big : m(r, c);
  }

  std::vector<std::size_t> solve() {
    if (n_ == 0) return {};
    run_hungarian();
    make_lexicographic();
    return row_to_col_;
  }

 private:
  double at(std::size_t r, std::size_t c) const { return a_[r * n_ + c]; }
  double reduced(std::size_t r, std::size_t c) const { return at(r, c) - u_[r + 1] - v_[c + 1]; }
  bool tight(std::size_t r, std::size_t c) const { return std::fabs(reduced(r, c)) <= tol_; }

  // Shortest augmenting path formulation with potentials, 1-based internally.
  void run_hungarian() {
    const double inf = std::numeric_limits<double>::infinity();
    u_.assign(n_ + 1, 0.0);
    v_.assign(n_ + 1, 0.0);
    std::vector<std::size_t> p(n_ + 1, 0), way(n_ + 1, 0);
    for (std::size_t i = 1; i <= n_; ++i) {
      p[0] = i;
      std::size_t j0 = 0;
      std::vector<double> minv(n_ + 1, inf);
      std::vector<char> used(n_ + 1, 0);
      do {
        used[j0] = 1;
        const std::size_t i0 = p[j0];
        double delta = inf;
        std::size_t j1 = 0;
        for (std::size_t j = 1; j <= n_; ++j) {
          if (used[j]) continue;
          const double cur = at(i0 - 1, j - 1) - u_[i0] - v_[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
        for (std::size_t j = 0; j <= n_; ++j) {
          if (used[j]) {
            u_[p[j]] += delta;
            v_[j] -= delta;
          } else {
            minv[j] -= delta;
          }
        }
        j0 = j1;
      } while (p[j0] != 0);
      do {
        const std::size_t j1 = way[j0];
        p[j0] = p[j1];
        j0 = j1;
      } while (j0 != 0);
    }
    row_to_col_.assign(n_, 0);
    col_to_row_.assign(n_, 0);
    for (std::size_t j = 1; j <= n_; ++j) {
      row_to_col_[p[j] - 1] = j - 1;
      col_to_row_[j - 1] = p[j] - 1;
    }
  }

  // Every optimal assignment is a perfect matching on tight edges of the
  // optimal duals. Walk rows in order and move each to its smallest tight
  // column that still admits a perfect matching of the unfixed rows.
  void make_lexicographic() {
    std::vector<char> fixed_col(n_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        if (fixed_col[j]) continue;
        if (j == row_to_col_[i]) break;
        if (!tight(i, j)) continue;
        if (reroute(i, j, fixed_col)) break;
      }
      fixed_col[row_to_col_[i]] = 1;
    }
  }

  // Try to give column j to row i. The row r currently on j must reach row
  // i's old column c through an alternating path of tight edges that avoids
  // fixed columns and column j.
  bool reroute(std::size_t i, std::size_t j, const std::vector<char>& fixed_col) {
    const std::size_t c = row_to_col_[i];
    const std::size_t r = col_to_row_[j];
    std::vector<std::size_t> prev_row(n_, n_);  // row that takes this row's column
    std::vector<char> seen_row(n_, 0);
    std::vector<std::size_t> queue{r};
    seen_row[r] = 1;
    seen_row[i] = 1;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t row = queue[head];
      for (std::size_t col = 0; col < n_; ++col) {
        if (fixed_col[col] || col == j || col == row_to_col_[row] || !tight(row, col)) continue;
        if (col == c) {
          std::size_t cur = row;
          std::size_t take = c;
          while (true) {
            const std::size_t released = row_to_col_[cur];
            row_to_col_[cur] = take;
            col_to_row_[take] = cur;
            if (cur == r) break;
            take = released;
            cur = prev_row[cur];
          }
          row_to_col_[i] = j;
          col_to_row_[j] = i;
          return true;
        }
        const std::size_t next = col_to_row_[col];
        if (seen_row[next]) continue;
        seen_row[next] = 1;
        prev_row[next] = row;
        queue.push_back(next);
      }
    }
    return false;
  }

  std::size_t rows_;
  std::size_t cols_;
  std::size_t n_;
  double tol_ = 0.0;
  std::vector<double> a_;
  std::vector<double> u_, v_;
  std::vector<std::size_t> row_to_col_, col_to_row_;
};

}  // namespace detail

/**
 * Minimum-cost assignment over a rectangular matrix.
 *
 * Returns (row, col) pairs sorted by row, restricted to real, non-forbidden
 * cells. Forbidden cells are used only when no assignment avoids them, and
 * such pairs are then left out of the result.
 */
inline Assignment hungarian_min_cost(const CostMatrix& m) {
  detail::SquareAssignment solver(m);
  const auto row_to_col = solver.solve();
  Assignment out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const std::size_t c = row_to_col[r];
    if (c < m.cols() && !m.forbidden(r, c)) out.emplace_back(r, c);
  }
  return out;
}

inline double assignment_cost(const CostMatrix& m, const Assignment& a) {
  double total = 0.0;
  for (const auto& [r, c] : a) total += m(r, c);
  return total;
}

/// Match distance gate, either absolute pixels or a fraction of the image diagonal.
struct MatchThreshold {
  enum class Unit { Pixels, DiagonalFraction };

  Unit unit = Unit::DiagonalFraction;
  double value = 0.05;

  static MatchThreshold pixels(double px) { return {Unit::Pixels, px}; }
  static MatchThreshold diagonal_fraction(double f) { return {Unit::DiagonalFraction, f}; }

  double resolve(const ImageSize& size) const {
    return unit == Unit::Pixels ? value : value * size.diagonal();
  }

  /// Accepts "12", "12px", "0.05frac" or "5%".
  static MatchThreshold parse(std::string_view text) {
    auto number = [&](std::string_view digits) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (ec != std::errc{} || ptr != digits.data() + digits.size() || !(v > 0.0) ||
          !std::isfinite(v)) {
        throw std::invalid_argument("invalid match threshold: '" + std::string(text) + "'");
      }
      return v;
    };
    auto ends_with = [&](std::string_view suffix) {
      return text.size() > suffix.size() && text.substr(text.size() - suffix.size()) == suffix;
    };
    if (ends_with("px")) return pixels(number(text.substr(0, text.size() - 2)));
    if (ends_with("frac")) return diagonal_fraction(number(text.substr(0, text.size() - 4)));
    if (ends_with("%")) return diagonal_fraction(number(text.substr(0, text.size() - 1)) / 100.0);
    return pixels(number(text));
  }

  std::string to_string() const {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    std::string s(buf, ptr);
    return unit == Unit::Pixels ? s + "px" : s + "frac";
  }

  friend bool operator==(const MatchThreshold&, const MatchThreshold&) = default;
};

struct MatchResult {
  Assignment pairs;  ///< (prediction index, ground-truth index)
  std::size_t n_valid = 0;
};

inline CostMatrix point_cost_matrix(std::span<const Point> pred, std::span<const Point> gt,
                                    double threshold) {
  CostMatrix m(pred.size(), gt.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double d = distance(pred[i], gt[j]);
      m(i, j) = d <= threshold ? d : kForbidden;
    }
  return m;
}

inline MatchResult match_points(std::span<const Point> pred, std::span<const Point> gt,
                                double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("match threshold must be > 0");
  MatchResult result;
  result.pairs = hungarian_min_cost(point_cost_matrix(pred, gt, threshold));
  result.n_valid = result.pairs.size();
  return result;
}

}  // namespace detcount
