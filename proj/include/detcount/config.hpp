// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file config.hpp
 * @brief INI configuration for rewards, GRPO and the toy environment.
 *
 *   [reward]  w_format w_detect w_count w_non_repeat lambda_detect
 *             match_threshold ("12px", "0.05frac", "5%" or bare pixels)
 *             structure_points content_points_max
 *             repeat_ngram repeat_min_count duplicate_distance_px
 *   [grpo]    group_size clip_epsilon kl_beta std_floor
 *   [toy]     seed epochs scenes_per_epoch inner_steps learning_rate prob_floor
 *             eval_scenes eval_samples final_eval_samples
 *             width height grid_cols grid_rows min_fish max_fish
 *             max_distractors difficulty jitter_fraction
 *             ref_p_fish ref_p_distractor ref_p_background ref_p_consistent
 *             holistic_accuracy ablation (comma-separated presets)
 *
 * Every key is optional; unknown sections or keys are errors. The toy scene
 * inherits reward.match_threshold for distractor spacing.
 */

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "detcount/grpo.hpp"
#include "detcount/matching.hpp"
#include "detcount/reward.hpp"
#include "detcount/toy.hpp"

namespace detcount {

inline constexpr const char* kConfigEnvVar = "DETCOUNT_CONFIG";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  RewardConfig reward;
  GRPOConfig grpo;
  toy::ToyConfig toy;
  std::vector<std::string> ablation{"count", "detect", "both"};

  void validate() const {
    reward.validate();
    grpo.validate();
    toy.validate();
    if (ablation.size() < 2) throw std::invalid_argument("toy.ablation needs at least two presets");
    for (const auto& name : ablation) toy::ablation_preset(name);
  }
};

namespace detail {

template <class T>
T convert(const std::string& key, const std::string& raw) {
  std::istringstream in(raw);
  T value{};
  if constexpr (std::is_unsigned_v<T>) {
    if (!raw.empty() && raw.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
  }
  if (!(in >> value) || !(in >> std::ws).eof()) throw ConfigError(key + ": cannot parse '" + raw + "'");
  return value;
}

class SectionReader {
 public:
  SectionReader(std::string name, const boost::property_tree::ptree& tree) : name_(std::move(name)), tree_(tree) {}

  template <class T>
  void read(const char* key, T& out) {
    known_.emplace_back(key);
    if (auto v = tree_.get_optional<std::string>(key)) out = convert<T>(name_ + "." + key, boost::trim_copy(*v));
  }

  std::optional<std::string> raw(const char* key) {
    known_.emplace_back(key);
    if (auto v = tree_.get_optional<std::string>(key)) return boost::trim_copy(*v);
    return std::nullopt;
  }

  void reject_unknown() const {
    for (const auto& [key, _] : tree_) {
      if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
        throw ConfigError("unknown key '" + name_ + "." + key + "'");
      }
    }
  }

 private:
  std::string name_;
  const boost::property_tree::ptree& tree_;
  std::vector<std::string> known_;
};

}  // namespace detail

inline Config parse_config(std::istream& in, const std::string& origin = "<config>") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  Config cfg;
  const boost::property_tree::ptree empty;
  auto section = [&](const char* name) {
    auto child = tree.get_child_optional(name);
    return detail::SectionReader(name, child ? *child : empty);
  };
  for (const auto& [name, child] : tree) {
    if (name != "reward" && name != "grpo" && name != "toy") throw ConfigError("unknown section [" + name + "]");
    if (!child.data().empty()) throw ConfigError("key '" + name + "' outside a section");
  }

  try {
    auto r = section("reward");
    r.read("w_format", cfg.reward.w_format);
    r.read("w_detect", cfg.reward.w_detect);
    r.read("w_count", cfg.reward.w_count);
    r.read("w_non_repeat", cfg.reward.w_non_repeat);
    r.read("lambda_detect", cfg.reward.lambda_detect);
    if (auto t = r.raw("match_threshold")) cfg.reward.match_threshold = MatchThreshold::parse(*t);
    r.read("structure_points", cfg.reward.structure_points);
    r.read("content_points_max", cfg.reward.content_points_max);
    r.read("repeat_ngram", cfg.reward.repeat_ngram);
    r.read("repeat_min_count", cfg.reward.repeat_min_count);
    r.read("duplicate_distance_px", cfg.reward.duplicate_distance_px);
    r.reject_unknown();

    auto g = section("grpo");
    g.read("group_size", cfg.grpo.group_size);
    g.read("clip_epsilon", cfg.grpo.clip_epsilon);
    g.read("kl_beta", cfg.grpo.kl_beta);
    g.read("std_floor", cfg.grpo.std_floor);
    g.reject_unknown();

    auto t = section("toy");
    auto& tc = cfg.toy;
    t.read("seed", tc.seed);
    t.read("epochs", tc.epochs);
    t.read("scenes_per_epoch", tc.scenes_per_epoch);
    t.read("inner_steps", tc.inner_steps);
    t.read("learning_rate", tc.learning_rate);
    t.read("prob_floor", tc.prob_floor);
    t.read("eval_scenes", tc.eval_scenes);
    t.read("eval_samples", tc.eval_samples);
    t.read("final_eval_samples", tc.final_eval_samples);
    t.read("width", tc.scene.width);
    t.read("height", tc.scene.height);
    t.read("grid_cols", tc.scene.grid_cols);
    t.read("grid_rows", tc.scene.grid_rows);
    t.read("min_fish", tc.scene.min_fish);
    t.read("max_fish", tc.scene.max_fish);
    t.read("max_distractors", tc.scene.max_distractors);
    t.read("difficulty", tc.scene.difficulty);
    t.read("jitter_fraction", tc.scene.jitter_fraction);
    t.read("ref_p_fish", tc.reference.emit[0]);
    t.read("ref_p_distractor", tc.reference.emit[1]);
    t.read("ref_p_background", tc.reference.emit[2]);
    t.read("ref_p_consistent", tc.reference.p_consistent);
    t.read("holistic_accuracy", tc.reference.holistic_accuracy);
    if (auto a = t.raw("ablation")) {
      cfg.ablation.clear();
      boost::split(cfg.ablation, *a, boost::is_any_of(","));
      for (auto& s : cfg.ablation) boost::trim(s);
    }
    t.reject_unknown();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  cfg.toy.scene.match_threshold = cfg.reward.match_threshold;

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

inline Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

/// Explicit path first, then $DETCOUNT_CONFIG, else built-in defaults.
inline Config resolve_config(const std::optional<std::string>& path) {
  if (path) return load_config_file(*path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config_file(env);
  Config cfg;
  cfg.validate();
  return cfg;
}

}  // namespace detcount
