// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter vectors, checkpoint files and inter-iteration delta merging.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <vector>

namespace rtrain {

/// Flat, finite, real-valued parameter vector.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(Eigen::Index dim);
  explicit ParamVector(Eigen::VectorXd values);

  static ParamVector zeros(Eigen::Index dim) { return ParamVector(dim); }

  Eigen::Index dim() const { return values_.size(); }
  const Eigen::VectorXd& values() const { return values_; }
  // Mutable access does not re-check finiteness; call check_finite() after bulk edits.
  Eigen::VectorXd& mutable_values() { return values_; }

  double operator[](Eigen::Index i) const { return values_[i]; }

  bool all_finite() const { return values_.allFinite(); }
  void check_finite() const;

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Eigen::VectorXd values_;
};

/// Checkpoints Θ_1..Θ_N of one iteration. All share one dimension.
class CheckpointSet {
 public:
  CheckpointSet(std::vector<ParamVector> checkpoints, int iteration = 1);

  const std::vector<ParamVector>& checkpoints() const { return checkpoints_; }
  std::size_t size() const { return checkpoints_.size(); }
  Eigen::Index dim() const { return checkpoints_.front().dim(); }
  int iteration() const { return iteration_; }

 private:
  std::vector<ParamVector> checkpoints_;
  int iteration_;
};

struct MergeConfig {
  double lambda = 1.0;  // λ_t, in [0, 1]
  int num_checkpoints = 4;
};

/// (1/N) Σ_i (Θ_i − reference), elementwise.
ParamVector average_delta(const CheckpointSet& checkpoints, const ParamVector& reference);

/// prev + λ · average_delta(checkpoints, prev).
ParamVector merge_iteration(const ParamVector& prev_merged, const CheckpointSet& checkpoints,
                            double lambda);

/// Binary layout: "RTCKPT01" magic, u32 version, u32 reserved, u64 dim,
/// dim little-endian float64 values, u64 FNV-1a checksum of the value bytes.
/// Written to a temporary sibling then renamed into place.
void save_checkpoint(const ParamVector& params, const std::filesystem::path& path);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace rtrain
