// Reference implementations used only by the tests. Written for clarity and
// independence from the library, not speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "detcount/geometry.hpp"
#include "detcount/response.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct BruteAssignment {
  std::size_t matched = 0;  ///< real, finite cells used
  double cost = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  ///< sorted by row
};

/// Enumerates every permutation of the square padding (dummy cost 0),
/// maximizing the number of finite real cells, then minimizing cost. The
/// first optimum in lexicographic permutation order wins ties.
inline BruteAssignment brute_force_assignment(const Matrix& m, std::size_t cols) {
  const std::size_t rows = m.size();
  const std::size_t n = std::max(rows, cols);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  BruteAssignment best;
  bool have = false;
  do {
    std::size_t matched = 0;
    double cost = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t c = perm[r];
      if (c < cols && std::isfinite(m[r][c])) {
        ++matched;
        cost += m[r][c];
      }
    }
    if (!have || matched > best.matched || (matched == best.matched && cost < best.cost)) {
      have = true;
      best.matched = matched;
      best.cost = cost;
      best.pairs.clear();
      for (std::size_t r = 0; r < rows; ++r) {
        if (perm[r] < cols && std::isfinite(m[r][perm[r]])) best.pairs.emplace_back(r, perm[r]);
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// ---------------------------------------------------------------------------

inline double box_iou(const detcount::Box& a, const detcount::Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// COCO evaluation for one class with equal scores: detections ranked by
/// image, then emission order; precision envelope sampled at 101 recall points.
inline std::pair<double, double> coco_ap_ar(const std::vector<std::vector<detcount::Box>>& preds,
                                            const std::vector<std::vector<detcount::Box>>& gts) {
  std::size_t npos = 0;
  for (const auto& g : gts) npos += g.size();
  double ap_sum = 0.0, ar_sum = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double thr = (50.0 + 5.0 * k) / 100.0;
    std::vector<bool> hits;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      std::vector<bool> used(gts[i].size(), false);
      for (std::size_t d = 0; d < preds[i].size() && d < 100; ++d) {
        int match = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts[i].size(); ++g) {
          if (used[g]) continue;
          const double v = box_iou(preds[i][d], gts[i][g]);
          if (v >= thr && v > best_iou) {
            best_iou = v;
            match = static_cast<int>(g);
          }
        }
        if (match >= 0) used[static_cast<std::size_t>(match)] = true;
        hits.push_back(match >= 0);
      }
    }
    std::vector<double> rec, prec;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      if (hits[i]) ++tp;
      rec.push_back(static_cast<double>(tp) / static_cast<double>(npos));
      prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
      const double target = r / 100.0;
      // Interpolated precision: best precision at any recall >= target.
      double p = 0.0;
      for (std::size_t i = 0; i < rec.size(); ++i) {
        if (rec[i] >= target) p = std::max(p, prec[i]);
      }
      ap += p;
    }
    ap_sum += ap / 101.0;
    ar_sum += rec.empty() ? 0.0 : rec.back();
  }
  return {100.0 * ap_sum / 10.0, 100.0 * ar_sum / 10.0};
}

// ---------------------------------------------------------------------------

/// GAME for one image and level by testing each cell's bounds explicitly.
inline double game_level(const std::vector<detcount::Point>& pred, const std::vector<detcount::Point>& gt,
                         double width, double height, int level) {
  const int cells = 1 << level;
  auto inside = [&](double v, double extent, int c) {
    const double scaled = v * cells;  // exact
    const bool last = c == cells - 1;
    const bool first = c == 0;
    return (first || scaled >= c * extent) && (last || scaled < (c + 1) * extent);
  };
  double total = 0.0;
  for (int cy = 0; cy < cells; ++cy)
    for (int cx = 0; cx < cells; ++cx) {
      long n = 0;
      for (const auto& p : pred) n += inside(p.x, width, cx) && inside(p.y, height, cy);
      for (const auto& g : gt) n -= inside(g.x, width, cx) && inside(g.y, height, cy);
      total += std::abs(static_cast<double>(n));
    }
  return total;
}

// ---------------------------------------------------------------------------

/// Random response values that the serializer must round-trip.
inline detcount::ParsedResponse random_response(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_det(0, 6), coin(0, 1), small(0, 512), len(0, 40), count(0, 30);
  std::uniform_real_distribution<double> coord(-50.0, 2000.0);
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:!?'\"\\/{}[]()<>=&%#@\t\n\xc3\xa9";
  std::uniform_int_distribution<std::size_t> ch(0, alphabet.size() - 1);

  detcount::ParsedResponse r;
  const int n_words = len(rng);
  for (int i = 0; i < n_words; ++i) r.think.push_back(alphabet[ch(rng)]);
  if (coin(rng)) r.think += "<detection> inside think <fish_count>7";
  if (coin(rng)) r.think += " a < b > c </thin";
  auto value = [&] { return coin(rng) ? static_cast<double>(small(rng)) : coord(rng); };
  const int n = n_det(rng);
  for (int i = 0; i < n; ++i) {
    detcount::Detection d;
    double x1 = value(), x2 = value(), y1 = value(), y2 = value();
    d.bbox = {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
    d.point = {value(), value()};
    r.detections.push_back(d);
  }
  r.fish_count = static_cast<std::size_t>(count(rng));
  return r;
}

}  // namespace oracle
