// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/curriculum.hpp"

using namespace rtrain;

namespace {

DataSample sample(std::string id, std::optional<std::string> response = std::nullopt) {
  DataSample s;
  s.id = std::move(id);
  s.prompt = "q " + s.id;
  s.response = std::move(response);
  return s;
}

std::vector<DataSample> samples(std::size_t n) {
  std::vector<DataSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample("s" + std::to_string(i)));
  return out;
}

}  // namespace

TEST_CASE("complexity from pass counts") {
  CHECK(ComplexityScore::from_passes(8, 8).value == 0.0);
  CHECK(ComplexityScore::from_passes(0, 8).value == 1.0);
  CHECK(ComplexityScore::from_passes(4, 8).value == 0.5);
  CHECK_THROWS_AS(ComplexityScore::from_passes(9, 8), Error);
  CHECK_THROWS_AS(ComplexityScore::from_passes(0, 0), Error);
}

TEST_CASE("complexity score counts verified rollouts") {
  SelectionConfig cfg;
  cfg.k = 8;
  int calls = 0;
  RolloutFn rollout = [&](const DataSample&, std::uint64_t) {
    return std::vector<TokenId>{calls++ % 4 == 0 ? 1 : 0};
  };
  VerifyFn verify = [](const DataSample&, std::span<const TokenId> y) { return y[0] == 1; };
  const auto c = complexity_score(sample("a"), rollout, verify, cfg);
  CHECK(calls == 8);
  CHECK(c.passes == 2);
  CHECK(c.value == doctest::Approx(0.75));
}

TEST_CASE("gaussian selection probability") {
  CHECK(selection_probability(0.45, 0.45, 0.2) == 1.0);
  CHECK(selection_probability(0.65, 0.45, 0.2) == doctest::Approx(0.6065).epsilon(1e-4));
  CHECK(selection_probability(0.65, 0.45, 0.2) == doctest::Approx(std::exp(-0.5)));
  for (double d = 0.0; d < 0.5; d += 0.05) {
    CHECK(selection_probability(0.45 + d, 0.45, 0.2) == doctest::Approx(selection_probability(0.45 - d, 0.45, 0.2)));
  }
  CHECK(selection_probability(1.0, 0.45, 0.2) < selection_probability(0.8, 0.45, 0.2));
  CHECK_THROWS_AS(selection_probability(0.5, 0.5, 0.0), Error);
}

TEST_CASE("selection frequency tracks the probability") {
  const std::size_t n = 20000;
  const auto xs = samples(n);
  SelectionConfig cfg;
  cfg.seed = 3;
  const std::vector<double> scores(n, 0.65);
  const auto kept = select_by_scores(xs, scores, cfg);
  const double p = std::exp(-0.5);
  const double sd = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(static_cast<double>(kept.size()) - n * p) < 4 * sd);
  CHECK(select_by_scores(xs, scores, cfg) == kept);
}

TEST_CASE("select_samples scores with the prefix but keeps original prompts") {
  std::vector<std::string> seen;
  RolloutFn rollout = [&](const DataSample& s, std::uint64_t) {
    seen.push_back(s.prompt);
    return std::vector<TokenId>{0};
  };
  VerifyFn verify = [](const DataSample&, std::span<const TokenId>) { return false; };
  SelectionConfig cfg;
  cfg.k = 2;
  cfg.mu = 1.0;
  const auto res = select_samples(samples(3), rollout, verify, cfg, "EXAMPLE");
  CHECK(res.scores.size() == 3);
  CHECK(res.kept.size() == 3);
  CHECK(seen.front() == "EXAMPLE\nq s0");
  for (const auto& k : res.kept) CHECK(k.prompt.rfind("q ", 0) == 0);
}

TEST_CASE("buckets partition the pool") {
  const auto xs = samples(9);
  const std::vector<double> scores = {0.0, 0.125, 0.2, 0.5, 0.8, 0.875, 1.0, 0.13, 0.87};
  const auto b = bucket_by_complexity(xs, scores);
  CHECK(b.easy.size() == 2);
  CHECK(b.hard.size() == 2);
  CHECK(b.medium.size() == 5);
  std::set<std::string> ids;
  for (const auto* v : {&b.easy, &b.medium, &b.hard})
    for (const auto& s : *v) ids.insert(s.id);
  CHECK(ids.size() == 9);
  CHECK_THROWS_AS(bucket_by_complexity(xs, scores, 0.5, 0.4), Error);
}

TEST_CASE("apportion by largest remainder") {
  CHECK(apportion(512, {1, 7, 2}) == std::array<std::size_t, 3>{51, 359, 102});
  CHECK(apportion(10, {1, 7, 2}) == std::array<std::size_t, 3>{1, 7, 2});
  CHECK(apportion(0, {1, 7, 2}) == std::array<std::size_t, 3>{0, 0, 0});
  CHECK(apportion(5, {0, 1, 0}) == std::array<std::size_t, 3>{0, 5, 0});
  for (std::size_t n = 0; n < 200; ++n) {
    const auto c = apportion(n, {3, 5, 4});
    CHECK(c[0] + c[1] + c[2] == n);
    for (std::size_t i = 0; i < 3; ++i) {
      const double exact = static_cast<double>(n) * std::array<int, 3>{3, 5, 4}[i] / 12.0;
      CHECK(std::abs(static_cast<double>(c[i]) - exact) < 1.0);
    }
  }
  CHECK_THROWS_AS(apportion(5, {0, 0, 0}), Error);
  CHECK_THROWS_AS(apportion(5, {-1, 1, 1}), Error);
}

TEST_CASE("curriculum mix draws from each bucket") {
  CurriculumBuckets b;
  for (int i = 0; i < 20; ++i) b.easy.push_back(sample("e" + std::to_string(i)));
  for (int i = 0; i < 100; ++i) b.medium.push_back(sample("m" + std::to_string(i)));
  for (int i = 0; i < 5; ++i) b.hard.push_back(sample("h" + std::to_string(i)));
  const auto mix = mix_curriculum(b, 64, {1, 7, 2}, 11);
  CHECK(mix.samples.size() == 64);
  CHECK(mix.counts[0] + mix.counts[1] + mix.counts[2] == 64);
  std::map<char, std::size_t> by_bucket;
  for (const auto& s : mix.samples) by_bucket[s.id[0]]++;
  CHECK(by_bucket['e'] == mix.counts[0]);
  CHECK(by_bucket['m'] == mix.counts[1]);
  CHECK(by_bucket['h'] == mix.counts[2]);
  CHECK(mix_curriculum(b, 64, {1, 7, 2}, 11).samples == mix.samples);
  CHECK(mix_curriculum(b, 0, {1, 7, 2}, 11).samples.empty());
  CurriculumBuckets no_hard = b;
  no_hard.hard.clear();
  CHECK_THROWS_AS(mix_curriculum(no_hard, 64, {1, 7, 2}, 11), Error);
  CHECK(mix_curriculum(no_hard, 64, {1, 7, 0}, 11).samples.size() == 64);
}

TEST_CASE("difficulty classification") {
  CHECK(classify_difficulty(2, 2) == Difficulty::easy);
  CHECK(classify_difficulty(1, 1) == Difficulty::easy);
  CHECK(classify_difficulty(3, 1) == Difficulty::hard);
  CHECK(classify_difficulty(1, 3) == Difficulty::hard);
  CHECK_THROWS_AS(classify_difficulty(0, 1), Error);
}

TEST_CASE("thinking mode detection") {
  CHECK(detect_thinking_mode("<think> work </think> 4") == ThinkingMode::slow);
  CHECK(detect_thinking_mode("  <think>x</think>y") == ThinkingMode::slow);
  CHECK(detect_thinking_mode("4") == ThinkingMode::fast);
  CHECK(detect_thinking_mode("answer <think> late </think>") == ThinkingMode::fast);
  CHECK_THROWS_AS(detect_thinking_mode("<think> open"), Error);
  CHECK(direct_form("<think> 1 + 2 = 3 </think> 3") == "1 + 2 = 3 3");
}

TEST_CASE("fusion dataset labels modes and prefixes prompts") {
  std::vector<DataSample> easy = {sample("e0", "<think> a </think> 1"), sample("e1", "2")};
  std::vector<DataSample> hard = {sample("h0", "<think> b </think> 3"), sample("h1", "<think> c </think> 4"),
                                  sample("h2", "<think> d </think> 5")};
  const auto fused = build_fusion_dataset(easy, hard);
  REQUIRE(fused.size() == 4);
  CHECK(fused[0].mode == ThinkingMode::fast);
  CHECK(fused[0].base.prompt == std::string(kMetaPromptFast) + "\nq e0");
  CHECK(*fused[0].base.response == "a 1");
  CHECK(detect_thinking_mode(*fused[0].base.response) == ThinkingMode::fast);
  CHECK(fused[2].mode == ThinkingMode::slow);
  CHECK(fused[2].response_format == ResponseFormat::think_block);
  CHECK(detect_thinking_mode(*fused[3].base.response) == ThinkingMode::slow);

  const auto adaptive = build_fusion_dataset(easy, hard, 1.0, false);
  CHECK(adaptive[0].meta_prompt.empty());
  CHECK(adaptive[0].base.prompt == "q e0");

  const auto path = std::filesystem::temp_directory_path() / "rtrain_test_fusion.jsonl";
  save_fusion_dataset(fused, path);
  CHECK(load_fusion_dataset(path) == fused);
  std::filesystem::remove(path);

  hard[0].response = "no block";
  CHECK_THROWS_AS(build_fusion_dataset(easy, hard), Error);
}
