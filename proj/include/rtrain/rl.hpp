// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// One GRPO training step on the tabular policy: sample groups from a frozen
// copy, score with the reward system, update on minibatches of prompt groups.

#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "rtrain/grpo.hpp"
#include "rtrain/mars.hpp"
#include "rtrain/repetition_guard.hpp"
#include "rtrain/toy_policy.hpp"

namespace rtrain {

struct RlPrompt {
  DataSample sample;
  std::size_t slot = 0;  // prompt index in the tabular policy
};

struct RlStepConfig {
  std::size_t group_size = 8;
  GenerationConfig generation{0.9, 1.0, std::numeric_limits<double>::infinity(), 16};
  bool self_repair = true;
  DetectorConfig detector;
  ExpectedMode mode = ExpectedMode::slow;
  GrpoConfig grpo;
  unsigned threads = 1;

  void validate() const;
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double masked_fraction = 0.0;
  double mean_kl = 0.0;       // per counted token, pi_old against pi_ref
  double mean_abs_adv = 0.0;
  std::size_t repair_events = 0;
};

/// Sampling, scoring and advantage computation; nothing is mutated.
struct RolloutBatch {
  std::vector<RolloutGroup> groups;
  std::vector<AdvantageVector> advantages;
  StepMetrics metrics;
};

RolloutBatch collect_rollouts(const TabularPolicy& pi_old, const TabularPolicy& ref, std::span<const RlPrompt> prompts,
                              const RlStepConfig& cfg, const Mars& mars, const Vocab& vocab, std::uint64_t seed);

/// Applies up to updates_per_batch passes of minibatch gradient ascent. The
/// minibatch objective is the sum of the per-group objectives in it.
void apply_updates(TabularPolicy& policy, const RolloutBatch& batch, const GrpoConfig& cfg, std::uint64_t seed);

/// Full step. If scoring throws, the policy is left untouched.
StepMetrics rl_step(TabularPolicy& policy, const TabularPolicy& ref, std::span<const RlPrompt> prompts,
                    const RlStepConfig& cfg, const Mars& mars, const Vocab& vocab, std::uint64_t seed);

void write_step_metrics_header(std::ostream& out);
void write_step_metrics(std::ostream& out, const StepMetrics& m);

}  // namespace rtrain
