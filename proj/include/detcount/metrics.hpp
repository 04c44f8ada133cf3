// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file metrics.hpp
 * @brief Dataset-level detection, segmentation and counting metrics.
 *
 * IoU-family values are reported in percent, rates in [0, 1].
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "detcount/geometry.hpp"
#include "detcount/response.hpp"

namespace detcount {

/// Row-major binary mask, 1 = fish foreground.
struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), data(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  ImageSize size() const { return {width, height}; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct GroundTruthRecord {
  std::string image_id;
  ImageSize image_size;
  std::vector<Point> points;
  std::optional<std::vector<Box>> boxes;
  std::optional<BinaryMask> mask;

  friend bool operator==(const GroundTruthRecord&, const GroundTruthRecord&) = default;
};

struct PredictionRecord {
  std::string image_id;
  ParsedResponse parsed;
  bool parse_ok = true;  ///< false: response text was unparseable, parsed is empty
  std::optional<BinaryMask> mask;
};

struct MetricsReport {
  std::optional<double> ap_50_95;
  std::optional<double> ar_50_95;
  std::optional<double> fg_iou;
  std::optional<double> bg_iou;
  std::optional<double> miou;
  double mae = 0.0;
  double match_rate = 0.0;
  double game = 0.0;
  std::array<double, 4> game_per_level{};
  std::optional<double> alignment_rate;
  std::size_t n_images = 0;
  std::size_t n_unparsed = 0;
};

// ---------------------------------------------------------------------------
// Detection

inline double iou_box(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct PrecisionRecall {
  double ap = 0.0;  ///< percent
  double ar = 0.0;  ///< percent
};

inline constexpr std::size_t kMaxDetectionsPerImage = 100;

inline std::array<double, 10> coco_iou_thresholds() {
  std::array<double, 10> t{};
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<double>(50 + 5 * k) / 100.0;
  return t;
}

/**
 * COCO-style AP/AR over IoU 0.50:0.05:0.95 for score-free detections.
 *
 * Every prediction has confidence 1.0, so the ranking is image order, then
 * emission order. Each prediction greedily takes the unmatched ground-truth
 * box with the highest IoU at or above the threshold. AP uses 101-point
 * interpolated precision; AR is recall with at most 100 detections per
 * image. Returns nullopt when there are no ground-truth boxes at all.
 */
inline std::optional<PrecisionRecall> average_precision_recall(
    std::span<const std::vector<Box>> preds, std::span<const std::vector<Box>> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("prediction/ground-truth image count mismatch");
  std::size_t npos = 0;
  for (const auto& g : gts) npos += g.size();
  if (npos == 0) return std::nullopt;

  PrecisionRecall out;
  const auto thresholds = coco_iou_thresholds();
  for (double thr : thresholds) {
    std::vector<char> is_tp;
    for (std::size_t img = 0; img < preds.size(); ++img) {
      const auto& p = preds[img];
      const auto& g = gts[img];
      std::vector<char> taken(g.size(), 0);
      const std::size_t nd = std::min(p.size(), kMaxDetectionsPerImage);
      for (std::size_t d = 0; d < nd; ++d) {
        double best = thr;
        std::size_t best_g = g.size();
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (taken[k]) continue;
          const double iou = iou_box(p[d], g[k]);
          if (iou >= best && (best_g == g.size() || iou > best)) {
            best = iou;
            best_g = k;
          }
        }
        if (best_g < g.size()) taken[best_g] = 1;
        is_tp.push_back(best_g < g.size() ? 1 : 0);
      }
    }

    const std::size_t nd = is_tp.size();
    std::vector<double> recall(nd), precision(nd);
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < nd; ++i) {
      (is_tp[i] ? tp : fp) += 1.0;
      recall[i] = tp / static_cast<double>(npos);
      precision[i] = tp / (tp + fp);
    }
    for (std::size_t i = nd; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double ap = 0.0;
    for (std::size_t k = 0; k <= 100; ++k) {
      const double r = static_cast<double>(k) / 100.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r);
      if (it != recall.end()) ap += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    out.ap += ap / 101.0;
    out.ar += nd ? recall.back() : 0.0;
  }
  out.ap = 100.0 * out.ap / static_cast<double>(thresholds.size());
  out.ar = 100.0 * out.ar / static_cast<double>(thresholds.size());
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation

struct MaskIoU {
  double fg_iou = 0.0;  ///< percent
  double bg_iou = 0.0;  ///< percent
  double miou = 0.0;    ///< percent
};

/// Foreground/background IoU over confusion counts summed across the whole
/// dataset. A class absent from both prediction and ground truth scores 100.
inline MaskIoU miou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("mask pair count mismatch");
  if (preds.empty()) throw std::invalid_argument("miou needs at least one mask pair");
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& g = gts[i];
    if (p.width != g.width || p.height != g.height || p.data.size() != g.data.size()) {
      throw std::invalid_argument("mask dimension mismatch");
    }
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const bool pf = p.data[k] != 0;
      const bool gf = g.data[k] != 0;
      if (pf && gf) ++tp;
      else if (pf) ++fp;
      else if (gf) ++fn;
      else ++tn;
    }
  }
  auto ratio = [](std::uint64_t inter, std::uint64_t uni) {
    return uni == 0 ? 100.0 : 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
  };
  MaskIoU out;
  out.fg_iou = ratio(tp, tp + fp + fn);
  out.bg_iou = ratio(tn, tn + fp + fn);
  out.miou = 0.5 * (out.fg_iou + out.bg_iou);
  return out;
}

// ---------------------------------------------------------------------------
// Counting

struct CountPair {
  std::size_t predicted = 0;
  std::size_t actual = 0;
};

struct CountErrors {
  double mae = 0.0;
  double match_rate = 0.0;
};

inline CountErrors mae_and_match_rate(std::span<const CountPair> records) {
  if (records.empty()) throw std::invalid_argument("mae_and_match_rate needs at least one record");
  double abs_err = 0.0;
  std::size_t exact = 0;
  for (const auto& r : records) {
    abs_err += std::fabs(static_cast<double>(r.predicted) - static_cast<double>(r.actual));
    if (r.predicted == r.actual) ++exact;
  }
  const auto n = static_cast<double>(records.size());
  return {abs_err / n, static_cast<double>(exact) / n};
}

inline constexpr std::size_t kGameLevels = 4;

/// Cell index along one axis for a 2^level split; boundary points go to the
/// higher cell, the far edge is clamped into the last cell.
inline std::size_t grid_cell(double coord, std::size_t extent, std::size_t level) {
  const std::size_t cells = std::size_t{1} << level;
  if (extent == 0 || !(coord > 0.0)) return 0;
  // coord * cells is exact (power-of-two scaling), so compare against cell
  // edges without trusting the rounded quotient.
  const double numer = coord * static_cast<double>(cells);
  const double ext = static_cast<double>(extent);
  double idx = std::floor(numer / ext);
  if (idx * ext > numer) idx -= 1.0;
  else if ((idx + 1.0) * ext <= numer) idx += 1.0;
  if (idx >= static_cast<double>(cells)) return cells - 1;
  return static_cast<std::size_t>(idx);
}

/// Sum over the 4^level cells of |predicted count - ground-truth count| for one image.
inline double grid_abs_error(std::span<const Point> pred, std::span<const Point> gt,
                             const ImageSize& size, std::size_t level) {
  const std::size_t cells = std::size_t{1} << level;
  std::vector<long> diff(cells * cells, 0);
  for (const auto& p : pred) ++diff[grid_cell(p.y, size.height, level) * cells + grid_cell(p.x, size.width, level)];
  for (const auto& g : gt) --diff[grid_cell(g.y, size.height, level) * cells + grid_cell(g.x, size.width, level)];
  double total = 0.0;
  for (long d : diff) total += static_cast<double>(d < 0 ? -d : d);
  return total;
}

struct GameResult {
  double game = 0.0;
  std::array<double, kGameLevels> per_level{};  ///< index 0 is level 1
};

inline GameResult game(std::span<const std::vector<Point>> preds, std::span<const std::vector<Point>> gts,
                       std::span<const ImageSize> sizes) {
  if (preds.size() != gts.size() || gts.size() != sizes.size()) {
    throw std::invalid_argument("game: per-image inputs differ in length");
  }
  GameResult out;
  if (gts.empty()) return out;
  for (std::size_t level = 1; level <= kGameLevels; ++level) {
    double sum = 0.0;
    for (std::size_t i = 0; i < gts.size(); ++i) sum += grid_abs_error(preds[i], gts[i], sizes[i], level);
    out.per_level[level - 1] = sum / static_cast<double>(gts.size());
  }
  for (double v : out.per_level) out.game += v;
  out.game /= static_cast<double>(kGameLevels);
  return out;
}

inline double alignment_rate(std::span<const ParsedResponse> responses) {
  if (responses.empty()) throw std::invalid_argument("alignment_rate needs at least one response");
  std::size_t aligned = 0;
  for (const auto& r : responses) {
    if (r.detections.size() == r.fish_count) ++aligned;
  }
  return static_cast<double>(aligned) / static_cast<double>(responses.size());
}

// ---------------------------------------------------------------------------
// Dataset evaluation

/**
 * Joins predictions to ground truth by image_id and computes every metric
 * whose inputs are present. AP/AR use images with ground-truth boxes; mIoU
 * uses images where both masks exist; alignment uses parseable responses.
 * Metrics without inputs stay nullopt.
 */
inline MetricsReport evaluate(std::span<const PredictionRecord> preds, std::span<const GroundTruthRecord> gts) {
  if (gts.empty()) throw std::invalid_argument("evaluation needs at least one ground-truth image");
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.image_id, &p).second) {
      throw std::invalid_argument("duplicate prediction for image_id '" + p.image_id + "'");
    }
  }
  for (const auto& p : preds) {
    const bool known = std::any_of(gts.begin(), gts.end(), [&](const auto& g) { return g.image_id == p.image_id; });
    if (!known) throw std::invalid_argument("prediction for unknown image_id '" + p.image_id + "'");
  }

  MetricsReport report;
  report.n_images = gts.size();
  std::vector<std::vector<Box>> box_preds, box_gts;
  std::vector<BinaryMask> mask_preds, mask_gts;
  std::vector<CountPair> counts;
  std::vector<std::vector<Point>> point_preds, point_gts;
  std::vector<ImageSize> sizes;
  std::vector<ParsedResponse> parsed;

  for (const auto& g : gts) {
    const auto it = by_id.find(g.image_id);
    if (it == by_id.end()) throw std::invalid_argument("no prediction for image_id '" + g.image_id + "'");
    const PredictionRecord& p = *it->second;
    if (!p.parse_ok) ++report.n_unparsed;
    else parsed.push_back(p.parsed);

    if (g.boxes) {
      std::vector<Box> boxes;
      for (const auto& d : p.parsed.detections) boxes.push_back(d.bbox);
      box_preds.push_back(std::move(boxes));
      box_gts.push_back(*g.boxes);
    }
    if (g.mask && p.mask) {
      mask_preds.push_back(*p.mask);
      mask_gts.push_back(*g.mask);
    }
    counts.push_back({p.parsed.fish_count, g.points.size()});
    std::vector<Point> pts;
    for (const auto& d : p.parsed.detections) pts.push_back(d.point);
    point_preds.push_back(std::move(pts));
    point_gts.push_back(g.points);
    sizes.push_back(g.image_size);
  }

  if (auto pr = average_precision_recall(box_preds, box_gts)) {
    report.ap_50_95 = pr->ap;
    report.ar_50_95 = pr->ar;
  }
  if (!mask_preds.empty()) {
    const MaskIoU m = miou(mask_preds, mask_gts);
    report.fg_iou = m.fg_iou;
    report.bg_iou = m.bg_iou;
    report.miou = m.miou;
  }
  const CountErrors ce = mae_and_match_rate(counts);
  report.mae = ce.mae;
  report.match_rate = ce.match_rate;
  const GameResult gr = game(point_preds, point_gts, sizes);
  report.game = gr.game;
  report.game_per_level = gr.per_level;
  if (!parsed.empty()) report.alignment_rate = alignment_rate(parsed);
  return report;
}

}  // namespace detcount
