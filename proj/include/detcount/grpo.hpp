// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file grpo.hpp
 * @brief Group-relative advantages and the clipped, KL-penalized GRPO objective.
 *
 * The objective is representation-agnostic: callers supply per-response
 * likelihood ratios pi_theta(o_i) / pi_old(o_i) and a KL divergence to the
 * reference policy.
 *
 *   A_i = (r_i - mean(r)) / std(r)                       population std
 *   J   = (1/G) sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta KL
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace detcount {

struct GRPOConfig {
  std::size_t group_size = 8;
  double clip_epsilon = 0.2;
  double kl_beta = 0.01;
  double std_floor = 1e-8;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
      throw std::invalid_argument("clip_epsilon must lie in (0, 1)");
    }
    if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) throw std::invalid_argument("kl_beta must be >= 0");
    if (!(std_floor > 0.0)) throw std::invalid_argument("std_floor must be > 0");
  }
};

struct RolloutGroup {
  std::vector<double> rewards;
  std::vector<double> ratios;
  double kl_to_ref = 0.0;

  void validate() const {
    if (rewards.size() != ratios.size()) throw std::invalid_argument("rewards and ratios differ in length");
    if (rewards.size() < 2) throw std::invalid_argument("a rollout group needs at least 2 responses");
    for (double r : ratios) {
      if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("likelihood ratios must be > 0");
    }
  }
};

/// Zero-variance groups (std below the floor) carry no signal and get all-zero advantages.
inline std::vector<double> group_advantages(std::span<const double> rewards, const GRPOConfig& cfg = {}) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("group_advantages needs at least 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);
  const double sd = std::sqrt(var);

  std::vector<double> adv(g, 0.0);
  if (sd < cfg.std_floor) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

inline double clipped_surrogate_term(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

/// d/d(ratio) of clipped_surrogate_term: the advantage while the unclipped
/// branch is active, zero once clipping has taken over.
inline double clipped_surrogate_ratio_gradient(double ratio, double advantage, double eps) {
  if (advantage > 0.0 && ratio > 1.0 + eps) return 0.0;
  if (advantage < 0.0 && ratio < 1.0 - eps) return 0.0;
  return advantage;
}

inline double grpo_objective(const RolloutGroup& group, const GRPOConfig& cfg = {}) {
  group.validate();
  const auto adv = group_advantages(group.rewards, cfg);
  double sum = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    sum += clipped_surrogate_term(group.ratios[i], adv[i], cfg.clip_epsilon);
  }
  return sum / static_cast<double>(adv.size()) - cfg.kl_beta * group.kl_to_ref;
}

}  // namespace detcount
