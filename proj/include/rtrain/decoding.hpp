// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Logit-space helpers and the two decoding filters (top-nσ, then top-p).
// Everything here is header-only and accepts any Eigen dense expression.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace rtrain {

using TokenMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::DenseBase<Derived>& x) {
  return (x.derived().array() - log_sum_exp(x)).matrix();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::DenseBase<Derived>& x) {
  return log_softmax(x).array().exp().matrix();
}

/// Population standard deviation.
template <typename Derived>
typename Derived::Scalar population_stddev(const Eigen::DenseBase<Derived>& x) {
  const auto mean = x.derived().array().mean();
  return std::sqrt((x.derived().array() - mean).square().mean());
}

/// Keeps tokens with logit >= max - nsigma * stddev(logits). The argmax always survives.
template <typename Derived>
TokenMask top_nsigma_filter(const Eigen::DenseBase<Derived>& logits, double nsigma) {
  const Eigen::Index n = logits.size();
  if (std::isinf(nsigma)) return TokenMask::Constant(n, true);
  const auto max = logits.maxCoeff();
  const auto threshold = max - nsigma * population_stddev(logits);
  TokenMask mask(n);
  for (Eigen::Index i = 0; i < n; ++i) mask[i] = logits.derived()(i) >= threshold;
  return mask;
}

/// Smallest probability-sorted prefix whose mass reaches p; ties sorted by token index.
template <typename Derived>
TokenMask top_p_filter(const Eigen::DenseBase<Derived>& probs, double p) {
  const Eigen::Index n = probs.size();
  if (p >= 1.0) return TokenMask::Constant(n, true);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return probs.derived()(a) > probs.derived()(b);
  });
  TokenMask mask = TokenMask::Constant(n, false);
  double cum = 0.0;
  for (Eigen::Index idx : order) {
    mask[idx] = true;
    cum += static_cast<double>(probs.derived()(idx));
    if (cum >= p - 1e-12) break;
  }
  return mask;
}

}  // namespace rtrain
