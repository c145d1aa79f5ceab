// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model-aware complexity scoring, Gaussian-shaped data selection, the
// easy/medium/hard RL mix and the fast/slow fusion dataset.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/data_pipeline.hpp"
#include "rtrain/toy_policy.hpp"

namespace rtrain {

struct ComplexityScore {
  double value = 0.0;
  int k = 1;
  int passes = 0;

  static ComplexityScore from_passes(int passes, int k);
};

struct SelectionConfig {
  double mu = 0.45;
  double sigma = 0.2;
  int k = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Draws one response for a sample; the seed fixes the draw.
using RolloutFn = std::function<std::vector<TokenId>(const DataSample&, std::uint64_t seed)>;
/// True when the response solves the sample. Throws when it cannot decide.
using VerifyFn = std::function<bool(const DataSample&, std::span<const TokenId>)>;

/// Rollouts from a sequence model; `slot` maps a sample to its prompt index.
RolloutFn model_rollout(const SequenceModel& model, std::function<std::size_t(const DataSample&)> slot,
                        GenerationConfig gen, TokenId eos);

/// k rollouts with seeds derived from (cfg.seed, sample id, i); value = 1 - passes/k.
ComplexityScore complexity_score(const DataSample& sample, const RolloutFn& rollout, const VerifyFn& verify,
                                 const SelectionConfig& cfg);

/// exp(-(c - mu)^2 / (2 sigma^2)): the Gaussian scaled so its peak is 1.
double selection_probability(double c, double mu, double sigma);

/// Independent Bernoulli admission per sample, in input order, from the "selection" stream.
std::vector<DataSample> select_by_scores(const std::vector<DataSample>& samples, std::span<const double> scores,
                                         const SelectionConfig& cfg);

struct SelectionResult {
  std::vector<DataSample> kept;  // original prompts, without the few-shot prefix
  std::vector<ComplexityScore> scores;  // one per input sample
};

/// Scores every sample (with `few_shot_prefix` and a newline prepended to the
/// prompt when non-empty) and admits by selection probability.
SelectionResult select_samples(const std::vector<DataSample>& samples, const RolloutFn& rollout,
                               const VerifyFn& verify, const SelectionConfig& cfg,
                               std::string_view few_shot_prefix = {});

struct CurriculumBuckets {
  std::vector<DataSample> easy, medium, hard;
  double low = 0.125;
  double high = 0.875;
};

/// easy: c <= low; medium: low < c < high; hard: c >= high.
CurriculumBuckets bucket_by_complexity(const std::vector<DataSample>& samples, std::span<const double> scores,
                                       double low = 0.125, double high = 0.875);

/// Largest-remainder split of n by integer weights; ties go to the lowest index.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<int, 3>& ratio);

struct MixedBatch {
  std::vector<DataSample> samples;
  std::array<std::size_t, 3> counts{};  // easy, medium, hard
};

/// Within a bucket: without replacement until exhausted, then with replacement.
/// The batch is shuffled. Empty bucket with a non-zero ratio entry is an error.
MixedBatch mix_curriculum(const CurriculumBuckets& buckets, std::size_t batch_size,
                          const std::array<int, 3>& ratio, std::uint64_t seed);

enum class Difficulty { easy, hard };
Difficulty classify_difficulty(int computation_complexity, int thinking_complexity);

// -- fast/slow fusion --

enum class ThinkingMode { fast, slow };
std::string_view to_string(ThinkingMode m);
ThinkingMode parse_thinking_mode(std::string_view s);

inline constexpr std::string_view kMetaPromptFast = "META_PROMPT: system 1";
inline constexpr std::string_view kMetaPromptSlow = "META_PROMPT: system 2";

enum class ResponseFormat { direct, think_block };

struct FusionSample {
  DataSample base;  // prompt and response as trained on
  ThinkingMode mode = ThinkingMode::fast;
  std::string meta_prompt;  // empty in adaptive mode
  ResponseFormat response_format = ResponseFormat::direct;

  bool operator==(const FusionSample&) const = default;
};

/// Slow iff a well-formed think block opens the response. Unbalanced tags throw.
ThinkingMode detect_thinking_mode(std::string_view response);

/// Response with think tags removed, reasoning kept inline.
std::string direct_form(std::string_view response);

/// Fast entries from easy samples (direct form), slow entries from hard samples
/// (think block required). Counts: n = min(|easy|, |hard|) fast and round(n * balance)
/// slow, capped by availability. `manual` prefixes the prompt with the meta prompt.
std::vector<FusionSample> build_fusion_dataset(const std::vector<DataSample>& easy,
                                               const std::vector<DataSample>& hard, double balance = 1.0,
                                               bool manual = true);

void save_fusion_dataset(const std::vector<FusionSample>& samples, const std::filesystem::path& path);
std::vector<FusionSample> load_fusion_dataset(const std::filesystem::path& path);

}  // namespace rtrain
