// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Group-relative policy optimisation: group-normalised advantages, the
// clip-higher surrogate with a per-token KL penalty, and the zero-advantage
// mask that drops responses carrying no relative signal.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/toy_policy.hpp"

namespace rtrain {

struct GrpoConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double beta = 1e-2;
  double delta_adv = 1e-8;
  double learning_rate = 1.0;
  std::size_t minibatch = 64;  // prompt groups per gradient pass
  int updates_per_batch = 1;   // at most 2

  void validate() const;
};

/// G responses to one prompt plus their per-token log-probabilities.
struct RolloutGroup {
  std::size_t prompt = 0;
  std::vector<std::vector<TokenId>> responses;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_theta;
  std::vector<std::vector<double>> logp_ref;
  /// Optional per-token flags; false marks tokens (e.g. injected control prompts)
  /// excluded from the objective. Empty means every token counts.
  std::vector<std::vector<bool>> loss_mask;
  std::vector<double> rewards;

  std::size_t size() const { return responses.size(); }
  void validate() const;
  bool counts(std::size_t i, std::size_t t) const { return loss_mask.empty() || loss_mask[i][t]; }
};

struct AdvantageVector {
  Eigen::VectorXd values;
};

/// (r_i - mean) / (std + delta), population std. Exactly zero when all rewards are equal.
AdvantageVector compute_advantages(std::span<const double> rewards, double delta_adv);

/// exp(ref - theta) - (ref - theta) - 1, the nonnegative per-token KL estimator.
double kl_term(double logp_theta, double logp_ref);

/// Per-token clipped surrogate min(ρA, clip(ρ, 1-eps_low, 1+eps_high) A).
double clipped_surrogate(double ratio, double advantage, double eps_low, double eps_high);

/// Per-response (1/|y_i|) Σ_t (surrogate - β·KL), from group.logp_theta, before masking.
std::vector<double> per_sequence_terms(const RolloutGroup& group, const AdvantageVector& adv,
                                       const GrpoConfig& cfg);

/// Replaces the whole term of every response whose advantage is exactly zero with 0.
std::vector<double> apply_zero_advantage_mask(std::vector<double> terms, const AdvantageVector& adv);

/// Masked objective (1/G) Σ_i term_i evaluated from group.logp_theta.
double grpo_objective_value(const RolloutGroup& group, const AdvantageVector& adv,
                            const GrpoConfig& cfg);

struct ObjectiveAndGrad {
  double value = 0.0;
  SparseGrad grad;  // d value / d policy logits
};

/// Same objective with log π_θ taken from `policy`, plus its analytic gradient. The
/// inactive branch of min/clip contributes no gradient.
ObjectiveAndGrad grpo_objective(const RolloutGroup& group, const AdvantageVector& adv,
                                const GrpoConfig& cfg, const TabularPolicy& policy);

}  // namespace rtrain
