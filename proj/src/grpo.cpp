// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rtrain {

void GrpoConfig::validate() const {
  if (!(eps_low > 0.0 && eps_high > 0.0)) throw Error("GrpoConfig: clip bounds must be positive");
  if (!(beta >= 0.0)) throw Error("GrpoConfig: beta must be >= 0");
  if (!(delta_adv > 0.0)) throw Error("GrpoConfig: delta_adv must be positive");
  if (!(learning_rate > 0.0)) throw Error("GrpoConfig: learning_rate must be positive");
  if (minibatch == 0) throw Error("GrpoConfig: minibatch must be positive");
  if (updates_per_batch < 1) throw Error("GrpoConfig: updates_per_batch must be >= 1");
}

void RolloutGroup::validate() const {
  const std::size_t g = responses.size();
  if (g < 2) throw Error("RolloutGroup: G must be >= 2");
  if (rewards.size() != g || logp_old.size() != g || logp_ref.size() != g ||
      (!logp_theta.empty() && logp_theta.size() != g) || (!loss_mask.empty() && loss_mask.size() != g)) {
    throw Error("RolloutGroup: per-response arrays are not length-matched");
  }
  for (std::size_t i = 0; i < g; ++i) {
    const std::size_t n = responses[i].size();
    if (logp_old[i].size() != n || logp_ref[i].size() != n ||
        (!logp_theta.empty() && logp_theta[i].size() != n) ||
        (!loss_mask.empty() && loss_mask[i].size() != n)) {
      throw Error("RolloutGroup: response " + std::to_string(i) + " has mismatched token arrays");
    }
  }
}

AdvantageVector compute_advantages(std::span<const double> rewards, double delta_adv) {
  if (rewards.size() < 2) throw Error("compute_advantages: G must be >= 2");
  const Eigen::Map<const Eigen::ArrayXd> r(rewards.data(), static_cast<Eigen::Index>(rewards.size()));
  if (!r.allFinite()) throw Error("compute_advantages: non-finite reward");
  if ((r == r[0]).all()) return {Eigen::VectorXd::Zero(r.size())};
  const double mean = r.mean();
  const double stddev = std::sqrt((r - mean).square().mean());
  return {((r - mean) / (stddev + delta_adv)).matrix()};
}

double kl_term(double logp_theta, double logp_ref) {
  const double d = logp_ref - logp_theta;
  return std::exp(d) - d - 1.0;
}

double clipped_surrogate(double ratio, double advantage, double eps_low, double eps_high) {
  const double clipped = std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

std::size_t counted_tokens(const RolloutGroup& g, std::size_t i) {
  if (g.loss_mask.empty()) return g.responses[i].size();
  return static_cast<std::size_t>(std::count(g.loss_mask[i].begin(), g.loss_mask[i].end(), true));
}

}  // namespace

std::vector<double> per_sequence_terms(const RolloutGroup& group, const AdvantageVector& adv,
                                       const GrpoConfig& cfg) {
  group.validate();
  if (group.logp_theta.empty()) throw Error("per_sequence_terms: logp_theta not populated");
  if (adv.values.size() != static_cast<Eigen::Index>(group.size())) {
    throw Error("per_sequence_terms: advantage length mismatch");
  }
  std::vector<double> terms(group.size(), 0.0);
  for (std::size_t i = 0; i < group.size(); ++i) {
    const std::size_t n = counted_tokens(group, i);
    if (n == 0) continue;
    double sum = 0.0;
    for (std::size_t t = 0; t < group.responses[i].size(); ++t) {
      if (!group.counts(i, t)) continue;
      const double ratio = std::exp(group.logp_theta[i][t] - group.logp_old[i][t]);
      sum += clipped_surrogate(ratio, adv.values[i], cfg.eps_low, cfg.eps_high) -
             cfg.beta * kl_term(group.logp_theta[i][t], group.logp_ref[i][t]);
    }
    terms[i] = sum / static_cast<double>(n);
  }
  return terms;
}

std::vector<double> apply_zero_advantage_mask(std::vector<double> terms, const AdvantageVector& adv) {
  if (adv.values.size() != static_cast<Eigen::Index>(terms.size())) {
    throw Error("apply_zero_advantage_mask: length mismatch");
  }
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (adv.values[static_cast<Eigen::Index>(i)] == 0.0) terms[i] = 0.0;
  }
  return terms;
}

double grpo_objective_value(const RolloutGroup& group, const AdvantageVector& adv,
                            const GrpoConfig& cfg) {
  const auto terms = apply_zero_advantage_mask(per_sequence_terms(group, adv, cfg), adv);
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum / static_cast<double>(group.size());
}

ObjectiveAndGrad grpo_objective(const RolloutGroup& group, const AdvantageVector& adv,
                                const GrpoConfig& cfg, const TabularPolicy& policy) {
  group.validate();
  if (adv.values.size() != static_cast<Eigen::Index>(group.size())) {
    throw Error("grpo_objective: advantage length mismatch");
  }
  ObjectiveAndGrad out;
  const double inv_g = 1.0 / static_cast<double>(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double a = adv.values[static_cast<Eigen::Index>(i)];
    if (a == 0.0) continue;  // zero-advantage mask: neither surrogate nor KL contributes
    const std::size_t n = counted_tokens(group, i);
    if (n == 0) continue;
    const double w = inv_g / static_cast<double>(n);
    const auto& tokens = group.responses[i];
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (!group.counts(i, t)) continue;
      const std::size_t state = policy.state_index(group.prompt, t, t == 0 ? -1 : tokens[t - 1]);
      const double lp = policy.token_logprob(state, tokens[t]);
      const double ratio = std::exp(lp - group.logp_old[i][t]);
      const double clipped = std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
      const bool unclipped_active = ratio * a <= clipped * a;
      const double d_ref = group.logp_ref[i][t] - lp;
      out.value += w * (std::min(ratio * a, clipped * a) - cfg.beta * (std::exp(d_ref) - d_ref - 1.0));
      const double dterm_dlp = (unclipped_active ? ratio * a : 0.0) - cfg.beta * (1.0 - std::exp(d_ref));
      if (dterm_dlp != 0.0) accumulate(out.grad, policy.grad_token_logprob(state, tokens[t]), w * dterm_dlp);
    }
  }
  return out;
}

}  // namespace rtrain
