// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/rl.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "rtrain/parallel.hpp"

namespace rtrain {

void RlStepConfig::validate() const {
  if (group_size < 2) throw Error("RlStepConfig: group_size must be >= 2");
  generation.validate();
  grpo.validate();
  if (grpo.updates_per_batch > 2) throw Error("RlStepConfig: updates_per_batch must be <= 2");
  if (self_repair) detector.validate();
}

RolloutBatch collect_rollouts(const TabularPolicy& pi_old, const TabularPolicy& ref, std::span<const RlPrompt> prompts,
                              const RlStepConfig& cfg, const Mars& mars, const Vocab& vocab, std::uint64_t seed) {
  cfg.validate();
  if (prompts.empty()) throw Error("rl_step: no prompts");
  const std::size_t g = cfg.group_size;
  RolloutBatch out;
  out.groups.resize(prompts.size());
  out.advantages.resize(prompts.size());
  std::vector<std::size_t> repairs(prompts.size(), 0);

  parallel_for(prompts.size(), cfg.threads, [&](std::size_t j) {
    const RlPrompt& p = prompts[j];
    RolloutGroup& grp = out.groups[j];
    grp.prompt = p.slot;
    std::vector<Response> responses(g);
    bool any_masked = false;
    for (std::size_t i = 0; i < g; ++i) {
      const std::uint64_t s = derive_seed(seed, "rollout", j * g + i);
      const RepairResult r = cfg.self_repair
                                 ? self_repair_generate(pi_old, p.slot, cfg.generation, cfg.detector, vocab.eos(), s)
                                 : RepairResult{};
      const SampledResponse plain =
          cfg.self_repair ? SampledResponse{} : sample_response(pi_old, p.slot, cfg.generation, vocab.eos(), s);
      const auto& tokens = cfg.self_repair ? r.tokens : plain.tokens;
      repairs[j] += r.events.size();
      any_masked = any_masked || !r.events.empty();
      responses[i].tokens = tokens;
      responses[i].text = vocab.decode(tokens);
      grp.responses.push_back(tokens);
      grp.loss_mask.push_back(cfg.self_repair ? r.loss_mask : std::vector<bool>(tokens.size(), true));
      // ratios are taken against the untempered policy, not the sampling distribution
      grp.logp_old.push_back(pi_old.sequence_logprobs(p.slot, tokens));
      grp.logp_ref.push_back(ref.sequence_logprobs(p.slot, tokens));
    }
    if (!any_masked) grp.loss_mask.clear();
    for (const auto& s : mars.score_group(p.sample, responses, cfg.mode)) grp.rewards.push_back(s.total);
    grp.logp_theta = grp.logp_old;
    out.advantages[j] = compute_advantages(grp.rewards, cfg.grpo.delta_adv);
  });

  StepMetrics& m = out.metrics;
  double kl_sum = 0.0;
  std::size_t kl_tokens = 0;
  std::size_t masked = 0;
  std::size_t total = 0;
  for (std::size_t j = 0; j < out.groups.size(); ++j) {
    const auto& grp = out.groups[j];
    for (std::size_t i = 0; i < grp.size(); ++i) {
      const double a = out.advantages[j].values[static_cast<Eigen::Index>(i)];
      m.mean_reward += grp.rewards[i];
      m.mean_abs_adv += std::fabs(a);
      masked += a == 0.0 ? 1 : 0;
      ++total;
      for (std::size_t t = 0; t < grp.responses[i].size(); ++t) {
        if (!grp.counts(i, t)) continue;
        kl_sum += kl_term(grp.logp_old[i][t], grp.logp_ref[i][t]);
        ++kl_tokens;
      }
    }
    m.repair_events += repairs[j];
  }
  m.mean_reward /= static_cast<double>(total);
  m.mean_abs_adv /= static_cast<double>(total);
  m.masked_fraction = static_cast<double>(masked) / static_cast<double>(total);
  m.mean_kl = kl_tokens ? kl_sum / static_cast<double>(kl_tokens) : 0.0;
  return out;
}

void apply_updates(TabularPolicy& policy, const RolloutBatch& batch, const GrpoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<std::size_t> order(batch.groups.size());
  std::iota(order.begin(), order.end(), 0);
  for (int u = 0; u < cfg.updates_per_batch; ++u) {
    Rng rng(derive_seed(seed, "minibatch", static_cast<std::uint64_t>(u)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t end = std::min(order.size(), start + cfg.minibatch);
      SparseGrad grad;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t j = order[k];
        accumulate(grad, grpo_objective(batch.groups[j], batch.advantages[j], cfg, policy).grad);
      }
      policy.apply(grad, cfg.learning_rate);
    }
  }
  policy.params().check_finite();
}

StepMetrics rl_step(TabularPolicy& policy, const TabularPolicy& ref, std::span<const RlPrompt> prompts,
                    const RlStepConfig& cfg, const Mars& mars, const Vocab& vocab, std::uint64_t seed) {
  const TabularPolicy pi_old = policy;
  RolloutBatch batch = collect_rollouts(pi_old, ref, prompts, cfg, mars, vocab, seed);
  TabularPolicy next = policy;
  apply_updates(next, batch, cfg.grpo, seed);
  policy = std::move(next);
  return batch.metrics;
}

void write_step_metrics_header(std::ostream& out) {
  out << "step,mean_reward,masked_fraction,mean_kl,mean_abs_adv,repair_events\n";
}

void write_step_metrics(std::ostream& out, const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%zu\n", m.step, m.mean_reward, m.masked_fraction,
                m.mean_kl, m.mean_abs_adv, m.repair_events);
  out << buf;
}

}  // namespace rtrain
