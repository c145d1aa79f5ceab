// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy-scale experiment driver: teacher and pretraining corpora, the iterative
// distillation loop with checkpoint merging, the curriculum RL loop,
// evaluation and report emission.

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rtrain/curriculum.hpp"
#include "rtrain/data_pipeline.hpp"
#include "rtrain/grpo.hpp"
#include "rtrain/mars.hpp"
#include "rtrain/param_store.hpp"
#include "rtrain/repetition_guard.hpp"
#include "rtrain/rl.hpp"
#include "rtrain/ssp_sim.hpp"
#include "rtrain/toy_policy.hpp"

namespace rtrain {

struct PretrainConfig {
  int traces_per_prompt = 10;
  double min_corruption = 0.0;  // per-prompt corruption rate ~ U[min, max]
  double max_corruption = 1.0;
  double smoothing = 1e-3;      // added count per token before taking logs
};

struct TeacherConfig {
  int candidates = 4;
  double wrong_rate = 0.3;    // chance a candidate carries a wrong answer
  double verbose_rate = 0.4;  // chance a candidate restates the sum (longer path)
};

struct SftConfig {
  int epochs = 5;
  double learning_rate = 0.5;
  std::size_t batch = 8;
};

struct DistillConfig {
  int iterations = 3;
  bool merge = true;              // false: take the last checkpoint
  bool stop_on_marginal = true;
  double min_improvement = 1.0;   // accuracy points
  std::string few_shot_prefix = "(1 + 2) mod 3 = ? <think> 1 + 2 = 3 % 3 = 0 </think> 0";
  SftConfig sft;
};

struct RlRunConfig {
  std::size_t steps = 200;
  std::size_t prompts_per_step = 64;
  std::array<int, 3> ratio{1, 7, 2};
  double bucket_low = 0.125;
  double bucket_high = 0.875;
  std::size_t eval_every = 50;  // 0: only at the end
  RlStepConfig step;
};

struct EvalConfig {
  GenerationConfig generation{0.9, 1.0, 1.5, 24};
  std::size_t min_effective = 500;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t pool_size = 256;
  std::size_t max_positions = 24;
  std::string dataset;  // optional JSONL pool; toy tasks are generated when empty
  PretrainConfig pretrain;
  TeacherConfig teacher;
  SelectionConfig selection;
  MergeConfig merge{1.0, 4};
  DistillConfig distill;
  RlRunConfig rl;
  EvalConfig eval;
  MarsConfig mars;
  DetectorConfig detector;
  SchedulerConfig scheduler;
  DedupConfig dedup;
  ZipSelectConfig zip;

  void validate() const;
};

/// INI file with one section per module. Unknown keys are errors.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_ini_text(const std::string& text);
/// Sets one "section.key" entry from its text form; the result is not re-validated.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_ini_text(const ExperimentConfig& cfg);

// -- toy world --

/// Vocabulary, prompt pool and slot lookup shared by every phase.
class ToyWorld {
 public:
  explicit ToyWorld(const ExperimentConfig& cfg);

  const Vocab& vocab() const { return vocab_; }
  const std::vector<DataSample>& pool() const { return pool_; }
  std::size_t slot(const DataSample& s) const;
  TabularPolicy blank_policy() const;
  std::size_t max_positions() const { return max_positions_; }

  /// Correct answer and a single leading think block.
  bool verify(const DataSample& s, std::span<const TokenId> tokens) const;
  VerifyFn verifier() const;

  DetectorConfig detector(const DetectorConfig& base) const;  // fills in the control prompt

 private:
  Vocab vocab_;
  std::vector<DataSample> pool_;
  std::unordered_map<std::string, std::size_t> slots_;
  std::size_t max_positions_;
};

/// "<think> a + b = s % m = r </think> r", optionally restating the sum.
std::string toy_trace(const ToyQuestion& q, int verbosity = 0, std::optional<int> answer = std::nullopt,
                      bool close_think = true);

/// Teacher candidates with rejection sampling: the shortest verified candidate,
/// or nullopt when every candidate fails.
std::optional<std::string> teacher_solution(const ToyWorld& world, const DataSample& s, const TeacherConfig& cfg,
                                            std::uint64_t seed);

/// Teacher responses for the whole pool; unsolved prompts are dropped.
std::vector<DataSample> generate_solutions(const ToyWorld& world, const TeacherConfig& cfg, std::uint64_t seed);

/// Weak base model: smoothed maximum-likelihood table over a noisy corpus where
/// each prompt has its own corruption rate and kind.
TabularPolicy pretrain_base(const ToyWorld& world, const PretrainConfig& cfg, std::uint64_t seed);

struct SftExample {
  std::size_t slot = 0;
  std::vector<TokenId> tokens;
};

/// Cross-entropy ascent; returns the parameters after each of the last n
/// optimizer steps (fewer when the run is shorter), the final one last.
std::vector<ParamVector> sft_train(TabularPolicy& policy, const std::vector<SftExample>& data, const SftConfig& cfg,
                                   int num_checkpoints, std::uint64_t seed);

// -- evaluation --

/// Smallest n with n * m >= min_effective.
std::size_t runs_needed(std::size_t benchmark_size, std::size_t min_effective = 500);

struct EvalResult {
  double accuracy = 0.0;  // percent
  double stderr_pct = 0.0;
  std::size_t runs = 0;
  std::size_t benchmark_size = 0;
};

EvalResult evaluate(const SequenceModel& policy, const ToyWorld& world, const std::vector<DataSample>& benchmark,
                    const EvalConfig& cfg, std::uint64_t seed);

// -- metrics --

struct MetricsRecord {
  std::string phase;
  std::size_t step = 0;
  std::vector<std::pair<std::string, double>> values;
  double wall_seconds = 0.0;  // summary only; CSVs stay reproducible
};

using MetricsLog = std::vector<MetricsRecord>;

struct RepetitionCounts {
  std::size_t sequences = 0;
  std::size_t flagged = 0;     // sequences with at least one detection
  std::size_t injected = 0;    // control prompts inserted
  std::size_t truncated = 0;
};

struct RepetitionAblation {
  RepetitionCounts baseline;
  RepetitionCounts repair;
  std::vector<DetectionEvent> events;  // from the repair run
};

RepetitionCounts count_repetition(const std::vector<RepairResult>& results);

/// Baseline and self-repair generation over the same seeds.
RepetitionAblation repetition_ablation(const SequenceModel& model, std::size_t num_prompts, std::size_t sequences,
                                       const GenerationConfig& gen, const DetectorConfig& det, TokenId eos,
                                       std::uint64_t seed);

// -- phases --

struct DistillResult {
  TabularPolicy policy;
  std::vector<EvalResult> accuracy;  // index 0 is the base model
  std::vector<std::size_t> selected;
  MetricsLog metrics;
};

DistillResult run_distillation(const ExperimentConfig& cfg, const ToyWorld& world, const TabularPolicy& base);

struct RlResult {
  TabularPolicy policy;
  std::vector<StepMetrics> steps;
  std::array<std::size_t, 3> bucket_sizes{};
  MetricsLog metrics;
};

RlResult run_rl(const ExperimentConfig& cfg, const ToyWorld& world, const TabularPolicy& start);

/// Mars wired with the toy code interpreter and the deterministic mock judges.
Mars make_toy_mars(const MarsConfig& cfg);

/// One CSV per phase ("<phase>_metrics.csv"); phases with no records get no file.
/// summary.txt adds tables and, when given, the repetition ablation.
void emit_report(const MetricsLog& metrics, const std::filesystem::path& out_dir,
                 const std::optional<RepetitionAblation>& repetition = std::nullopt);

/// Reads back a file written by emit_report.
MetricsLog read_metrics_csv(const std::filesystem::path& path, const std::string& phase);

}  // namespace rtrain
