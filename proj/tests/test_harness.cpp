// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rtrain/common.hpp"
#include "rtrain/harness.hpp"

using namespace rtrain;

namespace {

std::filesystem::path temp_dir(const char* name) {
  const auto p = std::filesystem::temp_directory_path() / (std::string("rtrain_test_") + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.pool_size = 32;
  cfg.eval.min_effective = 64;
  cfg.distill.iterations = 1;
  cfg.distill.stop_on_marginal = false;
  cfg.rl.steps = 2;
  cfg.rl.prompts_per_step = 8;
  cfg.rl.eval_every = 0;
  return cfg;
}

}  // namespace

TEST_CASE("evaluation run counts") {
  CHECK(runs_needed(30) == 17);
  CHECK(runs_needed(500) == 1);
  CHECK(runs_needed(1000) == 1);
  CHECK(runs_needed(256) == 2);
  CHECK_THROWS_AS(runs_needed(0), Error);
}

TEST_CASE("toy traces verify only when correct and well formed") {
  const ExperimentConfig cfg = small_config();
  const ToyWorld world(cfg);
  const auto& s = world.pool().front();
  const auto q = parse_toy_prompt(s.prompt);
  auto enc = [&](const std::string& t) {
    auto v = world.vocab().encode(t);
    v.push_back(world.vocab().eos());
    return v;
  };
  CHECK(world.verify(s, enc(toy_trace(q))));
  CHECK(world.verify(s, enc(toy_trace(q, 1))));
  CHECK_FALSE(world.verify(s, enc(toy_trace(q, 0, (q.answer() + 1) % q.modulus))));
  CHECK_FALSE(world.verify(s, enc(toy_trace(q, 0, std::nullopt, false))));
  CHECK(enc(toy_trace(q)).size() <= 15);
  CHECK(world.detector(cfg.detector).control_prompt == std::vector<TokenId>{world.vocab().id("<repair>")});
}

TEST_CASE("teacher solutions verify") {
  const ExperimentConfig cfg = small_config();
  const ToyWorld world(cfg);
  const auto solved = generate_solutions(world, cfg.teacher, 3);
  CHECK_FALSE(solved.empty());
  CHECK(solved.size() <= world.pool().size());
  for (const auto& s : solved) {
    auto t = world.vocab().encode(*s.response);
    t.push_back(world.vocab().eos());
    CHECK(world.verify(s, t));
  }
}

TEST_CASE("sft keeps the last optimizer steps") {
  const ExperimentConfig cfg = small_config();
  const ToyWorld world(cfg);
  TabularPolicy p = world.blank_policy();
  std::vector<SftExample> data;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& s = world.pool()[i];
    auto t = world.vocab().encode(toy_trace(parse_toy_prompt(s.prompt)));
    t.push_back(world.vocab().eos());
    data.push_back({world.slot(s), t});
  }
  SftConfig sft;
  sft.epochs = 2;
  sft.batch = 8;  // 3 steps per epoch, 6 in total
  const auto cks = sft_train(p, data, sft, 4, 1);
  REQUIRE(cks.size() == 4);
  CHECK(cks.back().values() == p.params().values());
  CHECK(cks[0].values() != cks[1].values());
  TabularPolicy q = world.blank_policy();
  CHECK(sft_train(q, data, sft, 10, 1).size() == 6);
}

TEST_CASE("metrics CSV round trip") {
  MetricsLog log = {{"rl", 1, {{"mean_reward", 0.25}, {"repair_events", 3}}, 0.5},
                    {"rl", 2, {{"mean_reward", 1.0 / 3.0}, {"repair_events", 0}}, 0.9},
                    {"distill", 0, {{"accuracy", 51.2}}, 0.1}};
  const auto dir = temp_dir("report");
  emit_report(log, dir);
  CHECK(std::filesystem::exists(dir / "rl_metrics.csv"));
  CHECK(std::filesystem::exists(dir / "distill_metrics.csv"));
  CHECK_FALSE(std::filesystem::exists(dir / "rl_eval_metrics.csv"));
  CHECK(std::filesystem::exists(dir / "summary.txt"));
  const auto back = read_metrics_csv(dir / "rl_metrics.csv", "rl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].step == 2);
  CHECK(back[1].values[0].first == "mean_reward");
  CHECK(back[1].values[0].second == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(back[0].values[1].second == 3.0);
  CHECK(slurp(dir / "rl_metrics.csv").find("0.5") == std::string::npos);  // wall time stays out

  MetricsLog backwards = {{"rl", 2, {{"x", 1}}, 0}, {"rl", 1, {{"x", 1}}, 0}};
  CHECK_THROWS_AS(emit_report(backwards, dir), Error);
  CHECK_THROWS_AS(emit_report({}, dir), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ablation counts match the events") {
  const ExperimentConfig cfg = small_config();
  const ToyWorld world(cfg);
  const ForcedLoopModel model(world.vocab().size(), {1, 2, 3}, world.vocab().id("<repair>"), world.vocab().eos());
  GenerationConfig gen;
  gen.max_len = 300;
  DetectorConfig det = world.detector(cfg.detector);
  det.ngram_size = 16;
  det.window = 32;
  det.subgram = 4;
  det.t_detect = 64;
  const auto ab = repetition_ablation(model, 1, 10, gen, det, world.vocab().eos(), 4);
  CHECK(ab.baseline.sequences == 10);
  CHECK(ab.baseline.truncated == 10);
  CHECK(ab.baseline.flagged == 10);
  CHECK(ab.baseline.injected == 0);
  CHECK(ab.repair.truncated == 0);
  CHECK(ab.repair.injected == ab.events.size());
  CHECK(ab.repair.injected == 10);

  const auto dir = temp_dir("ablation");
  emit_report({}, dir, ab);
  const auto summary = slurp(dir / "summary.txt");
  CHECK(summary.find("baseline") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config INI round trip and errors") {
  ExperimentConfig cfg;
  cfg.seed = 42;
  cfg.merge.lambda = 0.5;
  cfg.rl.ratio = {2, 5, 3};
  cfg.rl.step.grpo.beta = 0.02;
  cfg.distill.few_shot_prefix = "(2 + 2) mod 3 = ? <think> 2 + 2 = 4 % 3 = 1 </think> 1";
  cfg.scheduler.mode = SchedMode::bsp;
  const auto text = config_to_ini_text(cfg);
  const auto back = config_from_ini_text(text);
  CHECK(config_to_ini_text(back) == text);
  CHECK(back.seed == 42);
  CHECK(back.merge.lambda == 0.5);
  CHECK(back.rl.ratio == std::array<int, 3>{2, 5, 3});
  CHECK(back.distill.few_shot_prefix == cfg.distill.few_shot_prefix);

  CHECK_THROWS_AS(config_from_ini_text("[experiment]\nbogus = 1\n"), Error);
  CHECK_THROWS_AS(config_from_ini_text("[merge]\nlambda = 2\n"), Error);
  CHECK_THROWS_AS(config_from_ini_text("[grpo]\nbeta = abc\n"), Error);
  ExperimentConfig c2;
  set_config_value(c2, "rl.steps", "7");
  CHECK(c2.rl.steps == 7);
  CHECK_THROWS_AS(set_config_value(c2, "rl.nope", "1"), Error);
}

TEST_CASE("single-checkpoint merge at full weight equals plain fine-tuning") {
  ExperimentConfig cfg = small_config();
  cfg.merge.lambda = 1.0;
  cfg.merge.num_checkpoints = 1;
  const ToyWorld world(cfg);
  const auto base = pretrain_base(world, cfg.pretrain, derive_seed(cfg.seed, "pretrain"));
  cfg.distill.merge = true;
  const auto merged = run_distillation(cfg, world, base);
  cfg.distill.merge = false;
  const auto plain = run_distillation(cfg, world, base);
  CHECK((merged.policy.params().values() - plain.policy.params().values()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(merged.accuracy.size() == 2);

  cfg.distill.merge = true;
  cfg.merge.lambda = 0.0;
  const auto frozen = run_distillation(cfg, world, base);
  CHECK(frozen.policy.params().values() == base.params().values());
}

TEST_CASE("zero RL steps leave the policy unchanged") {
  ExperimentConfig cfg = small_config();
  cfg.rl.steps = 0;
  const ToyWorld world(cfg);
  const auto base = pretrain_base(world, cfg.pretrain, 1);
  const auto r = run_rl(cfg, world, base);
  CHECK(r.policy.params().values() == base.params().values());
  CHECK(r.steps.empty());
}

TEST_CASE("curriculum counts fill each RL batch") {
  ExperimentConfig cfg = small_config();
  const ToyWorld world(cfg);
  const auto base = pretrain_base(world, cfg.pretrain, 1);
  const auto r = run_rl(cfg, world, base);
  CHECK(r.bucket_sizes[0] + r.bucket_sizes[1] + r.bucket_sizes[2] == world.pool().size());
  std::size_t rows = 0;
  for (const auto& m : r.metrics) {
    if (m.phase != "rl") continue;
    ++rows;
    double total = 0.0;
    for (const auto& [k, v] : m.values) {
      if (k == "n_easy" || k == "n_medium" || k == "n_hard") total += v;
    }
    CHECK(total == 8.0);
  }
  CHECK(rows == 2);
}
