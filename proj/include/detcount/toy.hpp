// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file toy.hpp
 * @brief Desk-scale synthetic environment for the detect-to-count rewards.
 *
 * Scenes are point sets on a fixed grid of candidate cells. Each cell holds
 * a fish, a fish-like distractor or background, and the policy observes that
 * class. Per candidate it makes an emit/skip decision with a probability
 * tied to the observed class, then declares a count: with probability
 * p_consistent the number of emitted detections, otherwise a holistic
 * estimate of the scene count that is forced to differ from the emitted
 * number.
 *
 * Because every decision is Bernoulli, response likelihoods, ratios and the
 * KL to the reference policy are exact, and the clipped GRPO surrogate has
 * a closed-form gradient in the decision logits.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detcount/geometry.hpp"
#include "detcount/grpo.hpp"
#include "detcount/matching.hpp"
#include "detcount/metrics.hpp"
#include "detcount/response.hpp"
#include "detcount/reward.hpp"

namespace detcount::toy {

/// Seeded generator with distributions defined here, so streams are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index of empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do x = engine_(); while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  /// Uniform in [lo, hi].
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Scenes

enum class CandidateClass : std::uint8_t { Fish = 0, Distractor = 1, Background = 2 };
inline constexpr std::size_t kClassCount = 3;

inline const char* class_name(CandidateClass c) {
  switch (c) {
    case CandidateClass::Fish: return "fish";
    case CandidateClass::Distractor: return "distractor";
    default: return "background";
  }
}

struct SceneParams {
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t grid_cols = 8;
  std::size_t grid_rows = 8;
  std::size_t min_fish = 1;
  std::size_t max_fish = 8;
  std::size_t max_distractors = 8;
  double difficulty = 0.5;        ///< [0, 1]: distractor density and fish crowding
  double jitter_fraction = 0.25;  ///< object offset from its cell centre, fraction of cell size
  MatchThreshold match_threshold = MatchThreshold::diagonal_fraction(0.05);

  std::size_t cell_count() const { return grid_cols * grid_rows; }

  void validate() const {
    if (width < 64 || height < 64) throw std::invalid_argument("scene must be at least 64x64");
    if (grid_cols == 0 || grid_rows == 0) throw std::invalid_argument("candidate grid must be non-empty");
    if (min_fish > max_fish) throw std::invalid_argument("min_fish exceeds max_fish");
    if (max_fish > cell_count()) throw std::invalid_argument("max_fish exceeds the number of grid cells");
    if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw std::invalid_argument("difficulty must lie in [0, 1]");
    if (!(jitter_fraction >= 0.0 && jitter_fraction < 0.5)) {
      throw std::invalid_argument("jitter_fraction must lie in [0, 0.5)");
    }
    if (!(match_threshold.value > 0.0)) throw std::invalid_argument("match_threshold must be > 0");
  }
};

struct Candidate {
  Point location;
  CandidateClass cls = CandidateClass::Background;
};

struct SyntheticScene {
  ImageSize image_size;
  std::vector<Point> gt_points;
  std::vector<Point> distractor_points;
  double difficulty = 0.0;
  std::uint64_t seed = 0;
  std::vector<Candidate> candidates;  ///< one per grid cell, row-major

  std::array<std::size_t, kClassCount> class_counts() const {
    std::array<std::size_t, kClassCount> n{};
    for (const auto& c : candidates) ++n[static_cast<std::size_t>(c.cls)];
    return n;
  }
};

/// Deterministic in (seed, params). Distractors keep at least twice the
/// match threshold from every fish.
inline SyntheticScene generate_scene(std::uint64_t seed, const SceneParams& params) {
  params.validate();
  Rng rng(seed);
  SyntheticScene scene;
  scene.image_size = {params.width, params.height};
  scene.difficulty = params.difficulty;
  scene.seed = seed;

  const double cell_w = static_cast<double>(params.width) / static_cast<double>(params.grid_cols);
  const double cell_h = static_cast<double>(params.height) / static_cast<double>(params.grid_rows);
  auto centre = [&](std::size_t cell) {
    return Point{(static_cast<double>(cell % params.grid_cols) + 0.5) * cell_w,
                 (static_cast<double>(cell / params.grid_cols) + 0.5) * cell_h};
  };
  auto place = [&](std::size_t cell) {
    const Point c = centre(cell);
    const double jx = params.jitter_fraction * cell_w;
    const double jy = params.jitter_fraction * cell_h;
    // Two decimals, as an annotation tool would store them.
    return Point{std::round(rng.uniform(c.x - jx, c.x + jx) * 100.0) / 100.0,
                 std::round(rng.uniform(c.y - jy, c.y + jy) * 100.0) / 100.0};
  };

  std::vector<CandidateClass> cls(params.cell_count(), CandidateClass::Background);
  std::vector<Point> location(params.cell_count());
  for (std::size_t i = 0; i < location.size(); ++i) location[i] = centre(i);

  // Crowding: fish live in a window that shrinks with difficulty.
  const std::size_t n_fish = rng.between(params.min_fish, params.max_fish);
  const double shrink = 1.0 - 0.5 * params.difficulty;
  std::size_t win_cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(shrink * params.grid_cols)));
  std::size_t win_rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(shrink * params.grid_rows)));
  if (win_cols * win_rows < n_fish) {
    win_cols = params.grid_cols;
    win_rows = params.grid_rows;
  }
  const std::size_t off_c = rng.index(params.grid_cols - win_cols + 1);
  const std::size_t off_r = rng.index(params.grid_rows - win_rows + 1);
  std::vector<std::size_t> window;
  for (std::size_t r = 0; r < win_rows; ++r)
    for (std::size_t c = 0; c < win_cols; ++c) window.push_back((off_r + r) * params.grid_cols + off_c + c);
  for (std::size_t k = 0; k < n_fish; ++k) {
    const std::size_t pick = k + rng.index(window.size() - k);
    std::swap(window[k], window[pick]);
    const std::size_t cell = window[k];
    cls[cell] = CandidateClass::Fish;
    location[cell] = place(cell);
    scene.gt_points.push_back(location[cell]);
  }

  const double min_sep = 2.0 * params.match_threshold.resolve(scene.image_size);
  const auto max_d = static_cast<std::size_t>(std::lround(params.difficulty * static_cast<double>(params.max_distractors)));
  const std::size_t n_distractors = rng.between(0, max_d);
  std::vector<std::size_t> free_cells;
  for (std::size_t i = 0; i < cls.size(); ++i)
    if (cls[i] == CandidateClass::Background) free_cells.push_back(i);
  for (std::size_t k = 0; k < free_cells.size() && scene.distractor_points.size() < n_distractors; ++k) {
    const std::size_t pick = k + rng.index(free_cells.size() - k);
    std::swap(free_cells[k], free_cells[pick]);
    const std::size_t cell = free_cells[k];
    const Point p = place(cell);
    const bool clear = std::all_of(scene.gt_points.begin(), scene.gt_points.end(),
                                   [&](const Point& g) { return distance(g, p) >= min_sep; });
    if (!clear) continue;
    cls[cell] = CandidateClass::Distractor;
    location[cell] = p;
    scene.distractor_points.push_back(p);
  }

  scene.candidates.reserve(cls.size());
  for (std::size_t i = 0; i < cls.size(); ++i) scene.candidates.push_back({location[i], cls[i]});
  return scene;
}

// ---------------------------------------------------------------------------
// Policy

/// Probabilities of the per-candidate emit decision, one per observed class,
/// plus the count-declaration rule.
struct ToyPolicy {
  std::array<double, kClassCount> emit{0.6, 0.3, 0.01};
  double p_consistent = 0.6;
  double holistic_accuracy = 0.6;  ///< P(holistic estimate == true count); not trained

  double emit_probability(CandidateClass c) const { return emit[static_cast<std::size_t>(c)]; }

  std::vector<double> candidate_emit_probabilities(const SyntheticScene& scene) const {
    std::vector<double> p;
    p.reserve(scene.candidates.size());
    for (const auto& c : scene.candidates) p.push_back(emit_probability(c.cls));
    return p;
  }

  void validate() const {
    for (double p : {emit[0], emit[1], emit[2], p_consistent, holistic_accuracy}) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("policy probabilities must lie in [0, 1]");
    }
  }

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;
};

/// Largest per-decision total-variation distance |p - q| between two policies.
inline double total_variation(const ToyPolicy& a, const ToyPolicy& b) {
  double tv = std::fabs(a.p_consistent - b.p_consistent);
  for (std::size_t c = 0; c < kClassCount; ++c) tv = std::max(tv, std::fabs(a.emit[c] - b.emit[c]));
  return tv;
}

/// Sufficient statistics of one sampled response for likelihood computations.
struct RolloutStats {
  std::array<std::size_t, kClassCount> offered{};
  std::array<std::size_t, kClassCount> emitted{};
  bool consistent = true;
  std::size_t n_emitted = 0;
  std::size_t declared = 0;
};

struct SampledResponse {
  std::string text;
  ParsedResponse response;
  RolloutStats stats;
};

inline SampledResponse sample_rollout(const ToyPolicy& policy, const SyntheticScene& scene, Rng& rng) {
  SampledResponse out;
  RolloutStats& st = out.stats;
  const double half_w = 0.3 * static_cast<double>(scene.image_size.width) /
                        std::sqrt(static_cast<double>(std::max<std::size_t>(1, scene.candidates.size())));
  const double w = static_cast<double>(scene.image_size.width);
  const double h = static_cast<double>(scene.image_size.height);
  for (const auto& cand : scene.candidates) {
    const auto k = static_cast<std::size_t>(cand.cls);
    ++st.offered[k];
    if (!rng.bernoulli(policy.emit[k])) continue;
    ++st.emitted[k];
    const Point p = cand.location;
    Detection d;
    d.point = p;
    d.bbox = Box{std::max(0.0, p.x - half_w), std::max(0.0, p.y - half_w), std::min(w, p.x + half_w),
                 std::min(h, p.y + half_w)};
    out.response.detections.push_back(std::move(d));
  }
  st.n_emitted = out.response.detections.size();

  st.consistent = rng.bernoulli(policy.p_consistent);
  if (st.consistent) {
    st.declared = st.n_emitted;
  } else {
    const std::size_t n_gt = scene.gt_points.size();
    std::size_t estimate = n_gt;
    if (!rng.bernoulli(policy.holistic_accuracy)) {
      estimate = (n_gt == 0 || rng.bernoulli(0.5)) ? n_gt + 1 : n_gt - 1;
    }
    if (estimate == st.n_emitted) {
      estimate = (st.n_emitted == 0 || rng.bernoulli(0.5)) ? st.n_emitted + 1 : st.n_emitted - 1;
    }
    st.declared = estimate;
  }
  out.response.fish_count = st.declared;
  out.response.think = "Scanned " + std::to_string(scene.candidates.size()) + " regions, marked " +
                       std::to_string(st.n_emitted) + " fish and report " + std::to_string(st.declared) + ".";
  out.text = serialize_response(out.response);
  return out;
}

/// Raw three-tag response text drawn from the policy.
inline std::string sample_response(const ToyPolicy& policy, const SyntheticScene& scene, Rng& rng) {
  return sample_rollout(policy, scene, rng).text;
}

// ---------------------------------------------------------------------------
// Exact likelihoods in logit space

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double sigmoid(double a) { return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a)); }

inline constexpr std::size_t kDecisionParams = kClassCount + 1;  ///< emit per class, then consistency
using PolicyLogits = std::array<double, kDecisionParams>;

inline PolicyLogits to_logits(const ToyPolicy& p) {
  return {logit(p.emit[0]), logit(p.emit[1]), logit(p.emit[2]), logit(p.p_consistent)};
}

inline ToyPolicy with_logits(ToyPolicy p, const PolicyLogits& a) {
  for (std::size_t c = 0; c < kClassCount; ++c) p.emit[c] = sigmoid(a[c]);
  p.p_consistent = sigmoid(a[kClassCount]);
  return p;
}

/// log pi(o) up to terms that do not depend on the policy parameters.
inline double log_likelihood(const PolicyLogits& a, const RolloutStats& st) {
  double ll = 0.0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    const double p = sigmoid(a[c]);
    const auto e = static_cast<double>(st.emitted[c]);
    const auto s = static_cast<double>(st.offered[c] - st.emitted[c]);
    if (e > 0.0) ll += e * std::log(p);
    if (s > 0.0) ll += s * std::log1p(-p);
  }
  const double pc = sigmoid(a[kClassCount]);
  ll += st.consistent ? std::log(pc) : std::log1p(-pc);
  return ll;
}

/// d log pi(o) / d logits.
inline PolicyLogits log_likelihood_gradient(const PolicyLogits& a, const RolloutStats& st) {
  PolicyLogits g{};
  for (std::size_t c = 0; c < kClassCount; ++c) {
    g[c] = static_cast<double>(st.emitted[c]) - static_cast<double>(st.offered[c]) * sigmoid(a[c]);
  }
  g[kClassCount] = (st.consistent ? 1.0 : 0.0) - sigmoid(a[kClassCount]);
  return g;
}

inline double bernoulli_kl(double p, double q) {
  double kl = 0.0;
  if (p > 0.0) kl += p * std::log(p / q);
  if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return kl;
}

/// Exact KL(policy || reference) between the response distributions for one
/// scene: every candidate decision plus the count rule.
inline double kl_to_reference(const PolicyLogits& a, const PolicyLogits& ref,
                              const std::array<std::size_t, kClassCount>& offered) {
  double kl = 0.0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    kl += static_cast<double>(offered[c]) * bernoulli_kl(sigmoid(a[c]), sigmoid(ref[c]));
  }
  return kl + bernoulli_kl(sigmoid(a[kClassCount]), sigmoid(ref[kClassCount]));
}

/// Per-logit curvature weight w * p * (1 - p); the gradient is this times (a - ref).
inline PolicyLogits kl_curvature(const PolicyLogits& a, const std::array<std::size_t, kClassCount>& offered) {
  PolicyLogits h{};
  for (std::size_t i = 0; i < kDecisionParams; ++i) {
    const double p = sigmoid(a[i]);
    const double weight = i < kClassCount ? static_cast<double>(offered[i]) : 1.0;
    h[i] = weight * p * (1.0 - p);
  }
  return h;
}

inline PolicyLogits kl_to_reference_gradient(const PolicyLogits& a, const PolicyLogits& ref,
                                             const std::array<std::size_t, kClassCount>& offered) {
  PolicyLogits g = kl_curvature(a, offered);
  for (std::size_t i = 0; i < kDecisionParams; ++i) g[i] *= a[i] - ref[i];
  return g;
}

// ---------------------------------------------------------------------------
// Evaluation

struct PolicyEval {
  double alignment_rate = 0.0;
  double mae = 0.0;
  double match_rate = 0.0;  ///< count accuracy
  double game = 0.0;
  double matched_fraction = 0.0;
  double mean_total_reward = 0.0;
};

/// Samples each scene `samples` times and scores the parsed texts.
inline PolicyEval evaluate_policy(const ToyPolicy& policy, const std::vector<SyntheticScene>& scenes,
                                  std::size_t samples, Rng& rng, const RewardConfig& reward_cfg) {
  if (scenes.empty() || samples == 0) throw std::invalid_argument("evaluation needs scenes and samples");
  std::vector<ParsedResponse> parsed;
  std::vector<CountPair> counts;
  std::vector<std::vector<Point>> pred_pts, gt_pts;
  std::vector<ImageSize> sizes;
  double matched = 0.0, reward = 0.0;
  std::size_t matched_n = 0;
  for (const auto& scene : scenes) {
    for (std::size_t s = 0; s < samples; ++s) {
      const std::string text = sample_response(policy, scene, rng);
      const ParseResult pr = parse_response(text);
      if (!pr.response) throw std::logic_error("toy policy produced an unparseable response");
      const ScoredResponse scored = score_parsed(pr, scene.gt_points, scene.image_size, reward_cfg);
      reward += scored.rewards.total;
      if (!scene.gt_points.empty()) {
        matched += static_cast<double>(scored.context.n_valid) / static_cast<double>(scene.gt_points.size());
        ++matched_n;
      }
      counts.push_back({pr.response->fish_count, scene.gt_points.size()});
      pred_pts.push_back(keypoints(*pr.response));
      gt_pts.push_back(scene.gt_points);
      sizes.push_back(scene.image_size);
      parsed.push_back(*pr.response);
    }
  }
  PolicyEval ev;
  ev.alignment_rate = alignment_rate(parsed);
  const CountErrors ce = mae_and_match_rate(counts);
  ev.mae = ce.mae;
  ev.match_rate = ce.match_rate;
  ev.game = game(pred_pts, gt_pts, sizes).game;
  ev.matched_fraction = matched_n ? matched / static_cast<double>(matched_n) : 1.0;
  ev.mean_total_reward = reward / static_cast<double>(parsed.size());
  return ev;
}

// ---------------------------------------------------------------------------
// Training

struct ToyConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 400;
  std::size_t scenes_per_epoch = 8;
  std::size_t inner_steps = 2;
  double learning_rate = 0.1;
  double prob_floor = 1e-4;
  std::size_t eval_scenes = 32;
  std::size_t eval_samples = 2;
  std::size_t final_eval_samples = 32;
  SceneParams scene;
  ToyPolicy reference;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
    if (scenes_per_epoch == 0) throw std::invalid_argument("scenes_per_epoch must be >= 1");
    if (inner_steps == 0) throw std::invalid_argument("inner_steps must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(prob_floor > 0.0 && prob_floor < 0.5)) throw std::invalid_argument("prob_floor must lie in (0, 0.5)");
    if (eval_scenes == 0 || eval_samples == 0 || final_eval_samples == 0) {
      throw std::invalid_argument("evaluation sizes must be >= 1");
    }
    scene.validate();
    reference.validate();
    for (double p : {reference.emit[0], reference.emit[1], reference.emit[2], reference.p_consistent}) {
      if (p < prob_floor || p > 1.0 - prob_floor) {
        throw std::invalid_argument("reference probabilities must lie within [prob_floor, 1 - prob_floor]");
      }
    }
  }
};

struct TrainRecord {
  std::size_t epoch = 0;
  double mean_total_reward = 0.0;
  double mean_format = 0.0;
  double mean_detect = 0.0;
  double mean_count = 0.0;
  double mean_non_repeat = 0.0;
  double alignment_rate = 0.0;  ///< over this epoch's rollouts
  double heldout_game = 0.0;
  double objective = 0.0;  ///< GRPO objective at the last inner step, before its update
  double kl_to_ref = 0.0;
  bool projected = false;  ///< a parameter hit the probability floor this epoch
  ToyPolicy policy;        ///< after this epoch's update

  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  ToyPolicy policy;
  bool projection_every_step = false;
};

inline std::vector<SyntheticScene> heldout_scenes(const ToyConfig& cfg) {
  std::vector<SyntheticScene> scenes;
  for (std::size_t i = 0; i < cfg.eval_scenes; ++i) {
    scenes.push_back(generate_scene(mix_seed(cfg.seed, 1000 + i), cfg.scene));
  }
  return scenes;
}

namespace detail {

struct GroupRollouts {
  std::array<std::size_t, kClassCount> offered{};
  std::vector<RolloutStats> stats;
  std::vector<double> advantages;
  std::vector<double> rewards;
};

}  // namespace detail

/**
 * GRPO on the toy policy.
 *
 * Each epoch draws scenes_per_epoch scenes and group_size responses per
 * scene, scores them with the reward engine, normalizes rewards within each
 * group and takes inner_steps gradient-ascent steps on
 *
 *   mean_scenes[ (1/G) sum_i min(rho_i A_i, clip(rho_i) A_i) ] - beta * KL
 *
 * in the decision logits, with rho_i the exact sequence-level likelihood
 * ratio against the sampling policy and KL the exact KL to the reference.
 * The KL pull is applied semi-implicitly (curvature frozen at the start of
 * the step) so large beta stays stable. Probabilities are projected onto
 * [prob_floor, 1 - prob_floor].
 */
inline TrainResult train_toy_grpo(const GRPOConfig& grpo_cfg, const RewardConfig& reward_cfg, const ToyConfig& cfg) {
  grpo_cfg.validate();
  reward_cfg.validate();
  cfg.validate();

  Rng rng(mix_seed(cfg.seed, 0));
  const auto eval_set = heldout_scenes(cfg);
  const PolicyLogits ref = to_logits(cfg.reference);
  const double bound = logit(1.0 - cfg.prob_floor);
  PolicyLogits theta = ref;
  ToyPolicy policy = cfg.reference;

  TrainResult result;
  std::size_t projected_epochs = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TrainRecord rec;
    rec.epoch = epoch;
    std::vector<detail::GroupRollouts> groups(cfg.scenes_per_epoch);
    std::vector<ParsedResponse> rollouts;
    for (auto& group : groups) {
      const SyntheticScene scene = generate_scene(rng.next(), cfg.scene);
      group.offered = scene.class_counts();
      for (std::size_t g = 0; g < grpo_cfg.group_size; ++g) {
        SampledResponse s = sample_rollout(policy, scene, rng);
        const ScoredResponse scored = score_text(s.text, scene.gt_points, scene.image_size, reward_cfg);
        group.rewards.push_back(scored.rewards.total);
        group.stats.push_back(s.stats);
        rec.mean_total_reward += scored.rewards.total;
        rec.mean_format += scored.rewards.format;
        rec.mean_detect += scored.rewards.detect;
        rec.mean_count += scored.rewards.count;
        rec.mean_non_repeat += scored.rewards.non_repeat;
        rollouts.push_back(std::move(s.response));
      }
      group.advantages = group_advantages(group.rewards, grpo_cfg);
    }
    const auto n = static_cast<double>(rollouts.size());
    rec.mean_total_reward /= n;
    rec.mean_format /= n;
    rec.mean_detect /= n;
    rec.mean_count /= n;
    rec.mean_non_repeat /= n;
    rec.alignment_rate = alignment_rate(rollouts);

    const PolicyLogits theta_old = theta;
    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
      PolicyLogits grad{}, curvature{};
      double objective = 0.0, kl = 0.0;
      for (const auto& group : groups) {
        RolloutGroup rg;
        rg.rewards = group.rewards;
        rg.kl_to_ref = kl_to_reference(theta, ref, group.offered);
        const auto G = static_cast<double>(group.stats.size());
        for (std::size_t i = 0; i < group.stats.size(); ++i) {
          const double ratio =
              std::exp(log_likelihood(theta, group.stats[i]) - log_likelihood(theta_old, group.stats[i]));
          rg.ratios.push_back(ratio);
          const double dratio = clipped_surrogate_ratio_gradient(ratio, group.advantages[i], grpo_cfg.clip_epsilon);
          if (dratio == 0.0) continue;
          const PolicyLogits dlog = log_likelihood_gradient(theta, group.stats[i]);
          for (std::size_t k = 0; k < kDecisionParams; ++k) grad[k] += dratio * ratio * dlog[k] / G;
        }
        const PolicyLogits h = kl_curvature(theta, group.offered);
        for (std::size_t k = 0; k < kDecisionParams; ++k) curvature[k] += h[k];
        objective += grpo_objective(rg, grpo_cfg);
        kl += rg.kl_to_ref;
      }
      const auto B = static_cast<double>(groups.size());
      rec.objective = objective / B;
      rec.kl_to_ref = kl / B;
      for (std::size_t k = 0; k < kDecisionParams; ++k) {
        // Solves t = theta + lr * (grad - beta * h * (t - ref)) / B for t.
        const double pull = cfg.learning_rate * grpo_cfg.kl_beta * curvature[k] / B;
        const double next = (theta[k] + cfg.learning_rate * grad[k] / B + pull * ref[k]) / (1.0 + pull);
        theta[k] = std::clamp(next, -bound, bound);
        if (theta[k] != next) rec.projected = true;
      }
    }
    policy = with_logits(policy, theta);
    if (rec.projected) ++projected_epochs;

    Rng eval_rng(mix_seed(cfg.seed, 2000 + epoch));
    rec.heldout_game = evaluate_policy(policy, eval_set, cfg.eval_samples, eval_rng, reward_cfg).game;
    rec.policy = policy;
    result.records.push_back(rec);
  }
  result.policy = policy;
  result.projection_every_step = projected_epochs == cfg.epochs;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationSetting {
  std::string name;
  RewardConfig reward;
};

/// Presets: "count" drops the detection reward, "detect" drops the count
/// reward, "both" keeps the base configuration.
inline AblationSetting ablation_preset(const std::string& name, const RewardConfig& base = {}) {
  AblationSetting s{name, base};
  if (name == "count") s.reward.w_detect = 0.0;
  else if (name == "detect") s.reward.w_count = 0.0;
  else if (name != "both") throw std::invalid_argument("unknown ablation preset '" + name + "'");
  return s;
}

struct AblationRow {
  std::string name;
  PolicyEval final_eval;
  ToyPolicy policy;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::vector<TrainRecord>> curves;  ///< one per setting
};

/// Trains one policy per setting with a shared seed, environment and
/// budget, then evaluates each on the same held-out scenes and sampling stream.
inline AblationResult run_ablation(const std::vector<AblationSetting>& settings, const GRPOConfig& grpo_cfg,
                                   const ToyConfig& cfg) {
  if (settings.size() < 2) throw std::invalid_argument("an ablation needs at least two settings");
  AblationResult out;
  const auto eval_set = heldout_scenes(cfg);
  for (const auto& setting : settings) {
    TrainResult trained = train_toy_grpo(grpo_cfg, setting.reward, cfg);
    Rng eval_rng(mix_seed(cfg.seed, 3));
    // Final metrics are scored with the base reward so rows stay comparable.
    RewardConfig scoring = setting.reward;
    scoring.w_detect = scoring.w_count = 1.0;
    out.rows.push_back({setting.name, evaluate_policy(trained.policy, eval_set, cfg.final_eval_samples, eval_rng, scoring),
                        trained.policy});
    out.curves.push_back(std::move(trained.records));
  }
  return out;
}

}  // namespace detcount::toy
