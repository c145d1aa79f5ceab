// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/grpo.hpp"
#include "rtrain/toy_policy.hpp"

using namespace rtrain;

namespace {

TabularPolicy random_policy(std::uint64_t seed) {
  TabularPolicy p(2, 5, 4);
  Rng rng(seed);
  std::normal_distribution<double> n;
  auto& x = p.mutable_params().mutable_values();
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = n(rng);
  return p;
}

// A group whose old/ref log-probs sit near the current policy so some ratios clip.
RolloutGroup random_group(const TabularPolicy& p, Rng& rng, std::size_t g, bool with_mask) {
  RolloutGroup grp;
  grp.prompt = uniform_index(rng, p.num_prompts());
  std::normal_distribution<double> n(0.0, 0.3);
  for (std::size_t i = 0; i < g; ++i) {
    std::vector<TokenId> toks(1 + uniform_index(rng, 5));
    for (auto& t : toks) t = static_cast<TokenId>(uniform_index(rng, 4));
    const auto lp = p.sequence_logprobs(grp.prompt, toks);
    std::vector<double> old, ref;
    std::vector<bool> mask;
    for (double l : lp) {
      old.push_back(l + n(rng));
      ref.push_back(l + n(rng));
      mask.push_back(!with_mask || uniform01(rng) < 0.7);
    }
    grp.responses.push_back(toks);
    grp.logp_theta.push_back(lp);
    grp.logp_old.push_back(old);
    grp.logp_ref.push_back(ref);
    if (with_mask) grp.loss_mask.push_back(mask);
    grp.rewards.push_back(static_cast<double>(uniform_index(rng, 3)));
  }
  return grp;
}

double objective_at(const TabularPolicy& p, RolloutGroup grp, const AdvantageVector& adv,
                    const GrpoConfig& cfg) {
  for (std::size_t i = 0; i < grp.size(); ++i) grp.logp_theta[i] = p.sequence_logprobs(grp.prompt, grp.responses[i]);
  return grpo_objective_value(grp, adv, cfg);
}

}  // namespace

TEST_CASE("advantages for a binary pair") {
  const std::vector<double> r = {1.0, 0.0};
  const auto a = compute_advantages(r, 1e-8);
  CHECK(a.values[0] == doctest::Approx(1.0));
  CHECK(a.values[1] == doctest::Approx(-1.0));
}

TEST_CASE("advantages are zero for constant rewards and standardised otherwise") {
  const std::vector<double> same = {0.4, 0.4, 0.4};
  CHECK(compute_advantages(same, 1e-8).values.isZero(0.0));
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(8);
    for (auto& x : r) x = uniform01(rng) * 4 - 2;
    const auto a = compute_advantages(r, 1e-8).values;
    CHECK(std::abs(a.mean()) < 1e-9);
    CHECK(std::sqrt(a.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-6));
  }
  const std::vector<double> one = {1.0};
  CHECK_THROWS_AS(compute_advantages(one, 1e-8), Error);
}

TEST_CASE("per-token KL estimator") {
  CHECK(kl_term(0.0, std::log(2.0)) == doctest::Approx(2.0 - std::log(2.0) - 1.0));
  CHECK(kl_term(0.0, std::log(2.0)) == doctest::Approx(0.3069).epsilon(1e-4));
  CHECK(kl_term(-1.3, -1.3) == 0.0);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(kl_term(uniform01(rng) * 6 - 3, uniform01(rng) * 6 - 3) >= 0.0);
}

TEST_CASE("clip-higher surrogate") {
  CHECK(clipped_surrogate(2.0, 1.0, 0.2, 0.28) == doctest::Approx(1.28));
  CHECK(clipped_surrogate(0.5, 1.0, 0.2, 0.28) == doctest::Approx(0.5));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2, 0.28) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(2.0, -1.0, 0.2, 0.28) == doctest::Approx(-2.0));
  CHECK(clipped_surrogate(1.1, 1.0, 0.2, 0.28) == doctest::Approx(1.1));
}

TEST_CASE("objective for a hand-computed group") {
  RolloutGroup g;
  g.responses = {{0}, {1, 2}};
  g.logp_old = {{std::log(0.5)}, {0.0, 0.0}};
  g.logp_theta = {{0.0}, {0.0, 0.0}};
  g.logp_ref = {{0.0}, {0.0, 0.0}};
  g.rewards = {1.0, 0.0};
  GrpoConfig cfg;
  const auto adv = compute_advantages(g.rewards, cfg.delta_adv);
  // Response 0: ratio 2 clipped to 1.28. Response 1: ratio 1 with A = -1.
  const double a = adv.values[0];
  CHECK(grpo_objective_value(g, adv, cfg) == doctest::Approx((1.28 * a + -a) / 2.0));
}

TEST_CASE("zero-advantage responses contribute nothing") {
  Rng rng(derive_seed(1, "grpo_mask"));
  const auto p = random_policy(2);
  GrpoConfig cfg;
  for (int trial = 0; trial < 1000; ++trial) {
    auto grp = random_group(p, rng, 4, trial % 2 == 0);
    grp.rewards.assign(4, static_cast<double>(trial % 3));
    const auto adv = compute_advantages(grp.rewards, cfg.delta_adv);
    CHECK(grpo_objective_value(grp, adv, cfg) == 0.0);
    const auto og = grpo_objective(grp, adv, cfg, p);
    CHECK(og.value == 0.0);
    CHECK(og.grad.empty());
  }
}

TEST_CASE("masked responses still count in the group denominator") {
  const auto p = random_policy(4);
  Rng rng(7);
  auto grp = random_group(p, rng, 3, false);
  grp.rewards = {1.0, 0.0, 0.5};
  GrpoConfig cfg;
  const auto adv = compute_advantages(grp.rewards, cfg.delta_adv);
  REQUIRE(adv.values[2] == 0.0);
  const auto terms = per_sequence_terms(grp, adv, cfg);
  CHECK(grpo_objective_value(grp, adv, cfg) == doctest::Approx((terms[0] + terms[1]) / 3.0));
  CHECK(apply_zero_advantage_mask(terms, adv)[2] == 0.0);
}

TEST_CASE("loss mask excludes tokens from sum and length") {
  RolloutGroup g;
  g.responses = {{0, 1}, {2}};
  g.logp_old = {{0.0, 0.0}, {0.0}};
  g.logp_theta = {{0.0, std::log(2.0)}, {0.0}};
  g.logp_ref = {{0.0, std::log(2.0)}, {0.0}};
  g.loss_mask = {{true, false}, {true}};
  g.rewards = {1.0, 0.0};
  GrpoConfig cfg;
  const auto adv = compute_advantages(g.rewards, cfg.delta_adv);
  const auto terms = per_sequence_terms(g, adv, cfg);
  CHECK(terms[0] == doctest::Approx(adv.values[0]));
  CHECK(terms[1] == doctest::Approx(adv.values[1]));
}

TEST_CASE("analytic objective matches the value path and finite differences") {
  Rng rng(derive_seed(2, "grpo_fd"));
  GrpoConfig cfg;
  cfg.beta = 0.05;
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = random_policy(100 + trial);
    const auto grp = random_group(p, rng, 4, trial % 2 == 1);
    const auto adv = compute_advantages(grp.rewards, cfg.delta_adv);
    const auto og = grpo_objective(grp, adv, cfg, p);
    CHECK(og.value == doctest::Approx(grpo_objective_value(grp, adv, cfg)).epsilon(1e-12));
    for (const auto& [state, row] : og.grad) {
      for (int k = 0; k < 4; ++k) {
        auto plus = p, minus = p;
        plus.mutable_logits_row(state)[k] += h;
        minus.mutable_logits_row(state)[k] -= h;
        const double fd = (objective_at(plus, grp, adv, cfg) - objective_at(minus, grp, adv, cfg)) / (2 * h);
        CHECK(std::abs(fd - row[k]) < 1e-6);
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("a small step along the gradient raises the objective") {
  Rng rng(derive_seed(3, "grpo_ascent"));
  GrpoConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_policy(500 + trial);
    const auto grp = random_group(p, rng, 4, false);
    const auto adv = compute_advantages(grp.rewards, cfg.delta_adv);
    const auto og = grpo_objective(grp, adv, cfg, p);
    if (og.grad.empty()) continue;
    p.apply(og.grad, 1e-3);
    CHECK(grpo_objective(grp, adv, cfg, p).value > og.value);
  }
}

TEST_CASE("group and config validation") {
  RolloutGroup g;
  g.responses = {{0}};
  g.logp_old = {{0.0}};
  g.logp_ref = {{0.0}};
  g.rewards = {1.0};
  CHECK_THROWS_AS(g.validate(), Error);
  g.responses.push_back({1, 2});
  g.logp_old.push_back({0.0});
  g.logp_ref.push_back({0.0, 0.0});
  g.rewards.push_back(0.0);
  CHECK_THROWS_AS(g.validate(), Error);
  GrpoConfig cfg;
  cfg.updates_per_batch = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
