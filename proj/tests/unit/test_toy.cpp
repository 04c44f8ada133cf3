#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "detcount/toy.hpp"

using namespace detcount;
using namespace detcount::toy;

namespace {

ToyConfig short_run(std::size_t epochs, std::uint64_t seed = 3) {
  ToyConfig c;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

RolloutStats random_stats(Rng& rng) {
  RolloutStats st;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    st.offered[c] = rng.index(20);
    st.emitted[c] = st.offered[c] ? rng.index(st.offered[c] + 1) : 0;
  }
  st.consistent = rng.bernoulli(0.5);
  return st;
}

}  // namespace

TEST(Rng, DeterministicAndInRange) {
  Rng a(5), b(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const std::size_t k = a.between(3, 7);
    EXPECT_EQ(k, b.between(3, 7));
    EXPECT_GE(k, 3u);
    EXPECT_LE(k, 7u);
  }
  EXPECT_THROW(a.index(0), std::invalid_argument);
}

TEST(Scene, EmptyWhenNoFish) {
  SceneParams p;
  p.min_fish = 0;
  p.max_fish = 0;
  EXPECT_TRUE(generate_scene(0, p).gt_points.empty());
}

TEST(Scene, DeterministicPerSeed) {
  const SceneParams p;
  const SyntheticScene a = generate_scene(7, p), b = generate_scene(7, p), c = generate_scene(8, p);
  EXPECT_EQ(a.gt_points, b.gt_points);
  EXPECT_EQ(a.distractor_points, b.distractor_points);
  EXPECT_NE(a.gt_points, c.gt_points);
}

TEST(Scene, Invariants) {
  for (double difficulty : {0.0, 0.5, 1.0}) {
    SceneParams p;
    p.difficulty = difficulty;
    p.max_distractors = 10;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      const SyntheticScene s = generate_scene(seed, p);
      const double sep = 2.0 * p.match_threshold.resolve(s.image_size);
      EXPECT_GE(s.gt_points.size(), p.min_fish);
      EXPECT_LE(s.gt_points.size(), p.max_fish);
      EXPECT_LE(s.distractor_points.size(), static_cast<std::size_t>(std::lround(difficulty * 10)));
      for (const auto& g : s.gt_points) {
        EXPECT_TRUE(s.image_size.contains(g));
        for (const auto& d : s.distractor_points) EXPECT_GE(distance(g, d), sep);
      }
      for (const auto& d : s.distractor_points) EXPECT_TRUE(s.image_size.contains(d));
      const auto n = s.class_counts();
      EXPECT_EQ(n[0], s.gt_points.size());
      EXPECT_EQ(n[1], s.distractor_points.size());
      EXPECT_EQ(s.candidates.size(), p.cell_count());
    }
  }
}

TEST(Scene, InvalidParams) {
  SceneParams p;
  p.width = 63;
  EXPECT_THROW(generate_scene(0, p), std::invalid_argument);
  p = {};
  p.min_fish = 5;
  p.max_fish = 4;
  EXPECT_THROW(generate_scene(0, p), std::invalid_argument);
  p = {};
  p.difficulty = 1.5;
  EXPECT_THROW(generate_scene(0, p), std::invalid_argument);
  p = {};
  p.max_fish = 65;
  EXPECT_THROW(generate_scene(0, p), std::invalid_argument);
}

TEST(Sampling, SilentPolicyEmitsNothing) {
  ToyPolicy silent;
  silent.emit = {0.0, 0.0, 0.0};
  silent.p_consistent = 1.0;
  Rng rng(1);
  const SyntheticScene s = generate_scene(1, {});
  const ParseResult r = parse_response(sample_response(silent, s, rng));
  ASSERT_TRUE(r.response);
  EXPECT_TRUE(r.response->detections.empty());
  EXPECT_EQ(r.response->fish_count, 0u);
}

TEST(Sampling, TextsAlwaysParseAndConsistencyIsExact) {
  ToyPolicy p;
  p.p_consistent = 1.0;
  Rng rng(2);
  std::vector<ParsedResponse> parsed;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const SyntheticScene s = generate_scene(seed, {});
    const ParseResult r = parse_response(sample_response(p, s, rng));
    ASSERT_TRUE(r.format.structure_ok);
    ASSERT_TRUE(r.response);
    EXPECT_EQ(r.format.entries_well_formed, r.format.entries_total);
    parsed.push_back(*r.response);
  }
  EXPECT_EQ(alignment_rate(parsed), 1.0);
}

TEST(Sampling, InconsistentDeclarationsNeverAlign) {
  ToyPolicy p;
  p.p_consistent = 0.0;
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const SampledResponse s = sample_rollout(p, generate_scene(seed, {}), rng);
    EXPECT_NE(s.response.detections.size(), s.response.fish_count);
    EXPECT_FALSE(s.stats.consistent);
  }
}

TEST(Sampling, CleanResponsesEarnNoRepetitionPenalty) {
  const ToyPolicy everything{{1.0, 1.0, 1.0}, 1.0, 0.6};
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SyntheticScene s = generate_scene(seed, {});
    const ScoredResponse r = score_text(sample_response(everything, s, rng), s.gt_points, s.image_size);
    EXPECT_EQ(r.rewards.non_repeat, 0.0);
    EXPECT_EQ(r.context.n_valid, s.gt_points.size());
  }
}

TEST(Likelihood, RatioMatchesDirectProduct) {
  Rng rng(5);
  const ToyPolicy a{{0.7, 0.2, 0.05}, 0.8, 0.6}, b{{0.4, 0.5, 0.1}, 0.3, 0.6};
  for (int i = 0; i < 200; ++i) {
    const RolloutStats st = random_stats(rng);
    double direct = 0.0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      const double e = static_cast<double>(st.emitted[c]), s = static_cast<double>(st.offered[c] - st.emitted[c]);
      direct += e * std::log(a.emit[c] / b.emit[c]) + s * std::log((1 - a.emit[c]) / (1 - b.emit[c]));
    }
    direct += st.consistent ? std::log(a.p_consistent / b.p_consistent)
                            : std::log((1 - a.p_consistent) / (1 - b.p_consistent));
    EXPECT_NEAR(log_likelihood(to_logits(a), st) - log_likelihood(to_logits(b), st), direct, 1e-10);
  }
}

TEST(Likelihood, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    PolicyLogits a{}, ref{};
    for (auto& v : a) v = rng.uniform(-3, 3);
    for (auto& v : ref) v = rng.uniform(-3, 3);
    const RolloutStats st = random_stats(rng);
    const PolicyLogits g = log_likelihood_gradient(a, st);
    const PolicyLogits gk = kl_to_reference_gradient(a, ref, st.offered);
    for (std::size_t k = 0; k < kDecisionParams; ++k) {
      PolicyLogits up = a, down = a;
      up[k] += h;
      down[k] -= h;
      EXPECT_NEAR(g[k], (log_likelihood(up, st) - log_likelihood(down, st)) / (2 * h), 1e-5);
      EXPECT_NEAR(gk[k], (kl_to_reference(up, ref, st.offered) - kl_to_reference(down, ref, st.offered)) / (2 * h),
                  1e-6);
    }
    EXPECT_GE(kl_to_reference(a, ref, st.offered), 0.0);
    EXPECT_EQ(kl_to_reference(a, a, st.offered), 0.0);
  }
}

TEST(Training, DeterministicRecordStreams) {
  const auto a = train_toy_grpo({}, {}, short_run(40));
  const auto b = train_toy_grpo({}, {}, short_run(40));
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_NE(a.records, train_toy_grpo({}, {}, short_run(40, 4)).records);
}

TEST(Training, RecordsAreWellFormed) {
  const auto r = train_toy_grpo({}, {}, short_run(30));
  ASSERT_EQ(r.records.size(), 30u);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const TrainRecord& rec = r.records[i];
    EXPECT_EQ(rec.epoch, i);
    EXPECT_GE(rec.alignment_rate, 0.0);
    EXPECT_LE(rec.alignment_rate, 1.0);
    EXPECT_GE(rec.heldout_game, 0.0);
    EXPECT_GE(rec.kl_to_ref, 0.0);
    EXPECT_NEAR(rec.mean_total_reward, rec.mean_format + rec.mean_detect + rec.mean_count + rec.mean_non_repeat, 1e-9);
  }
  EXPECT_FALSE(r.projection_every_step);
}

TEST(Training, RewardImproves) {
  const auto r = train_toy_grpo({}, {}, short_run(200));
  EXPECT_GT(r.records.back().mean_total_reward, r.records.front().mean_total_reward);
}

TEST(Training, StrongKlAnchorsToReference) {
  GRPOConfig g;
  g.kl_beta = 100.0;
  const ToyConfig c = short_run(400);
  const auto r = train_toy_grpo(g, {}, c);
  EXPECT_LE(total_variation(r.policy, c.reference), 0.05);
}

TEST(Training, CountOnlyLocalizesWorse) {
  const ToyConfig c = short_run(300, 11);
  const auto count_only = train_toy_grpo({}, ablation_preset("count").reward, c);
  const auto both = train_toy_grpo({}, ablation_preset("both").reward, c);
  EXPECT_GT(count_only.records.back().heldout_game, both.records.back().heldout_game);
}

TEST(Training, InvalidConfig) {
  ToyConfig c;
  c.epochs = 0;
  EXPECT_THROW(train_toy_grpo({}, {}, c), std::invalid_argument);
  c = {};
  c.reference.emit[2] = 0.0;
  EXPECT_THROW(train_toy_grpo({}, {}, c), std::invalid_argument);
}

TEST(Ablation, PresetsAndDeterminism) {
  EXPECT_EQ(ablation_preset("count").reward.w_detect, 0.0);
  EXPECT_EQ(ablation_preset("detect").reward.w_count, 0.0);
  EXPECT_EQ(ablation_preset("both").reward.w_detect, 1.0);
  EXPECT_THROW(ablation_preset("format"), std::invalid_argument);

  const ToyConfig c = short_run(20);
  EXPECT_THROW(run_ablation({ablation_preset("both")}, {}, c), std::invalid_argument);
  const auto r = run_ablation({ablation_preset("both"), ablation_preset("both")}, {}, c);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].policy, r.rows[1].policy);
  EXPECT_EQ(r.rows[0].final_eval.game, r.rows[1].final_eval.game);
  EXPECT_EQ(r.rows[0].final_eval.matched_fraction, r.rows[1].final_eval.matched_fraction);
  EXPECT_EQ(r.curves[0], r.curves[1]);
}
