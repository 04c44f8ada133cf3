// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file reward.hpp
 * @brief Verifiable rewards for one detect-to-count response.
 *
 * Four components, combined linearly:
 *
 *   format      structure_points for the three-tag layout, plus up to
 *               content_points_max in proportion to well-formed entries
 *   detect      lambda_detect * n_valid / n_gt  (keypoint matching)
 *               + match term: 0 if n_pred == n_count, else -1
 *   count       +1 if n_count == n_gt, else -1
 *   non_repeat  -1 on duplicate detections or a looping think text, else 0
 *
 *   total = w_format*format + w_detect*detect + w_count*count + w_non_repeat*non_repeat
 */

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "detcount/geometry.hpp"
#include "detcount/matching.hpp"
#include "detcount/response.hpp"

namespace detcount {

struct RewardConfig {
  double w_format = 1.0;
  double w_detect = 1.0;
  double w_count = 1.0;
  double w_non_repeat = 1.0;
  double lambda_detect = 4.0;
  MatchThreshold match_threshold = MatchThreshold::diagonal_fraction(0.05);
  double structure_points = 1.0;
  double content_points_max = 3.0;

  // Non-repetition rule.
  std::size_t repeat_ngram = 10;
  std::size_t repeat_min_count = 3;
  double duplicate_distance_px = 1.0;

  void validate() const {
    for (double w : {w_format, w_detect, w_count, w_non_repeat}) {
      if (!std::isfinite(w)) throw std::invalid_argument("reward weights must be finite");
    }
    if (!(lambda_detect > 0.0)) throw std::invalid_argument("lambda_detect must be > 0");
    if (!(content_points_max >= 0.0)) throw std::invalid_argument("content_points_max must be >= 0");
    if (!(structure_points >= 0.0)) throw std::invalid_argument("structure_points must be >= 0");
    if (!(match_threshold.value > 0.0)) throw std::invalid_argument("match_threshold must be > 0");
    if (repeat_ngram == 0 || repeat_min_count < 2) {
      throw std::invalid_argument("repeat_ngram must be >= 1 and repeat_min_count >= 2");
    }
  }
};

struct RewardContext {
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;   ///< well-formed detections
  std::size_t n_count = 0;  ///< declared fish_count
  std::size_t n_valid = 0;  ///< predictions matched within the threshold

  friend bool operator==(const RewardContext&, const RewardContext&) = default;
};

struct RewardBreakdown {
  double format = 0.0;
  double accuracy = 0.0;  ///< accuracy part of detect
  double match = 0.0;     ///< match part of detect
  double detect = 0.0;
  double count = 0.0;
  double non_repeat = 0.0;
  double total = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

struct DetectionReward {
  double accuracy = 0.0;
  double match = 0.0;
  double detect = 0.0;
  std::size_t n_valid = 0;
};

/// Content points need a declared count only for an empty detection list:
/// full credit iff the response declares zero fish.
inline double format_reward(const FormatReport& rep, std::optional<std::size_t> declared_count,
                            const RewardConfig& cfg = {}) {
  if (!rep.structure_ok) return 0.0;
  double reward = cfg.structure_points;
  if (rep.entries_total > 0) {
    reward += cfg.content_points_max * static_cast<double>(rep.entries_well_formed) /
              static_cast<double>(rep.entries_total);
  } else if (declared_count && *declared_count == 0) {
    reward += cfg.content_points_max;
  }
  return reward;
}

inline std::vector<Point> keypoints(const ParsedResponse& resp) {
  std::vector<Point> pts;
  pts.reserve(resp.detections.size());
  for (const auto& d : resp.detections) pts.push_back(d.point);
  return pts;
}

/// n_gt == 0 rewards abstention: full accuracy iff nothing was predicted.
inline DetectionReward detection_reward(const ParsedResponse& resp, std::span<const Point> gt,
                                        double threshold_px, const RewardConfig& cfg = {}) {
  DetectionReward r;
  const auto pred = keypoints(resp);
  if (gt.empty()) {
    r.accuracy = pred.empty() ? cfg.lambda_detect : 0.0;
  } else {
    r.n_valid = match_points(pred, gt, threshold_px).n_valid;
    r.accuracy = cfg.lambda_detect * (static_cast<double>(r.n_valid) / static_cast<double>(gt.size()));
  }
  r.match = resp.detections.size() == resp.fish_count ? 0.0 : -1.0;
  r.detect = r.accuracy + r.match;
  return r;
}

inline double count_reward(const ParsedResponse& resp, std::size_t n_gt) {
  return resp.fish_count == n_gt ? 1.0 : -1.0;
}

namespace detail {

inline std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  constexpr std::string_view ws = " \t\r\n\f\v";
  std::size_t pos = text.find_first_not_of(ws);
  while (pos != std::string_view::npos) {
    const std::size_t end = text.find_first_of(ws, pos);
    words.push_back(text.substr(pos, end == std::string_view::npos ? end : end - pos));
    pos = end == std::string_view::npos ? end : text.find_first_not_of(ws, end);
  }
  return words;
}

}  // namespace detail

/// True when some run of `n` consecutive whitespace-separated words occurs at least `min_count` times.
inline bool has_repeated_ngram(std::string_view text, std::size_t n, std::size_t min_count) {
  const auto words = detail::split_words(text);
  if (words.size() < n) return false;
  std::map<std::vector<std::string_view>, std::size_t> seen;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::vector<std::string_view> gram(words.begin() + static_cast<std::ptrdiff_t>(i),
                                       words.begin() + static_cast<std::ptrdiff_t>(i + n));
    if (++seen[std::move(gram)] >= min_count) return true;
  }
  return false;
}

inline bool has_duplicate_detections(const ParsedResponse& resp, double min_distance_px) {
  const auto& d = resp.detections;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      if (d[i].bbox == d[j].bbox || distance(d[i].point, d[j].point) < min_distance_px) return true;
    }
  return false;
}

inline double non_repetition_reward(const ParsedResponse& resp, const RewardConfig& cfg = {}) {
  if (has_duplicate_detections(resp, cfg.duplicate_distance_px)) return -1.0;
  if (has_repeated_ngram(resp.think, cfg.repeat_ngram, cfg.repeat_min_count)) return -1.0;
  return 0.0;
}

inline double weighted_total(const RewardBreakdown& b, const RewardConfig& cfg) {
  return cfg.w_format * b.format + cfg.w_detect * b.detect + cfg.w_count * b.count +
         cfg.w_non_repeat * b.non_repeat;
}

struct ScoredResponse {
  FormatReport format;
  RewardContext context;
  RewardBreakdown rewards;
};

/**
 * Scores a parse result against ground-truth points.
 *
 * An unparseable response keeps its format credit, takes the match penalty
 * (detect = -1, no accuracy) and count = -1, and has non_repeat = 0.
 */
inline ScoredResponse score_parsed(const ParseResult& parsed, std::span<const Point> gt,
                                   const ImageSize& image, const RewardConfig& cfg) {
  ScoredResponse out;
  out.format = parsed.format;
  out.context.n_gt = gt.size();
  RewardBreakdown& b = out.rewards;

  if (!parsed.response) {
    b.format = format_reward(parsed.format, std::nullopt, cfg);
    b.match = -1.0;
    b.detect = -1.0;
    b.count = -1.0;
    b.non_repeat = 0.0;
  } else {
    const ParsedResponse& resp = *parsed.response;
    const DetectionReward det =
        detection_reward(resp, gt, cfg.match_threshold.resolve(image), cfg);
    b.format = format_reward(parsed.format, resp.fish_count, cfg);
    b.accuracy = det.accuracy;
    b.match = det.match;
    b.detect = det.detect;
    b.count = count_reward(resp, gt.size());
    b.non_repeat = non_repetition_reward(resp, cfg);
    out.context.n_pred = resp.detections.size();
    out.context.n_count = resp.fish_count;
    out.context.n_valid = det.n_valid;
  }
  b.total = weighted_total(b, cfg);
  return out;
}

inline RewardBreakdown total_reward(const ParseResult& parsed, std::span<const Point> gt,
                                    const ImageSize& image, const RewardConfig& cfg = {}) {
  return score_parsed(parsed, gt, image, cfg).rewards;
}

inline ScoredResponse score_text(std::string_view text, std::span<const Point> gt,
                                 const ImageSize& image, const RewardConfig& cfg = {}) {
  return score_parsed(parse_response(text), gt, image, cfg);
}

}  // namespace detcount
