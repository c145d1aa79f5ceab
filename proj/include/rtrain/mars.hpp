// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-source reward routing: math answers, code execution, preference
// scoring, plus format and repetition penalties folded into one value in [-1, 1].

#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtrain/code_runner.hpp"
#include "rtrain/common.hpp"
#include "rtrain/data_pipeline.hpp"

namespace rtrain {

/// Neither the rule checker nor the verifier could decide.
class UnverifiableError : public Error {
 public:
  using Error::Error;
};

enum class Evaluator { math, code, preference };
std::string_view to_string(Evaluator e);

Evaluator route(const DataSample& sample);

// -- math --

/// Final answer of a response: last \boxed{...}, else the text after the last
/// "answer:"/"answer is", else the last number outside any think block.
std::optional<std::string> extract_final_answer(std::string_view response);

/// Parses integers, decimals and rationals ("-3", "0.50", "1/2", "+007").
std::optional<long double> parse_numeric(std::string_view text);

class MathVerifier {
 public:
  virtual ~MathVerifier() = default;
  /// Binary judgment; nullopt when the verifier declines.
  virtual std::optional<bool> judge(std::string_view response, std::string_view ground_truth) const = 0;
};

/// Deterministic stand-in for an LLM judge: compares the extracted (or last-line)
/// answer to the ground truth after stripping whitespace and case.
class MockLlmVerifier final : public MathVerifier {
 public:
  std::optional<bool> judge(std::string_view response, std::string_view ground_truth) const override;
};

/// Rule stage first; the verifier only sees responses the rules cannot parse.
/// Throws UnverifiableError when neither stage reaches a verdict.
bool verify_math(std::string_view response, std::string_view ground_truth,
                 const MathVerifier* verifier = nullptr);

// -- code --

enum class CodeScheme { staged, continuous };
CodeScheme parse_code_scheme(std::string_view s);

enum class CodeStage { extraction, syntax, execution, comparison };

struct CaseResult {
  bool pass = false;
};

struct CodeExecResult {
  CodeStage stage_reached = CodeStage::extraction;
  std::vector<CaseResult> per_case;
  bool syntax_ok = false;

  double pass_rate() const;
};

/// Body of the last fenced ``` block; nullopt if there is none.
std::optional<std::string> extract_code(std::string_view response);

/// Stdout and expected output are compared with trailing whitespace trimmed per line.
bool outputs_match(std::string_view actual, std::string_view expected);

/// Cases run concurrently (up to `threads`); results keep case order.
CodeExecResult execute_code(std::string_view response, std::span<const CodeTestCase> cases,
                            const CodeRunner& runner, unsigned threads = 4);

double code_reward(const CodeExecResult& result, CodeScheme scheme);

double reward_code(std::string_view response, std::span<const CodeTestCase> cases, CodeScheme scheme,
                   const CodeRunner& runner, unsigned threads = 4);

// -- preference --

class PreferenceModel {
 public:
  virtual ~PreferenceModel() = default;
  virtual double raw_score(std::string_view prompt, std::string_view response) const = 0;
};

/// Raw score = distinct words overlapping the prompt + 0.1 * distinct words, minus
/// 0.05 per word beyond 200.
class MockPreferenceModel final : public PreferenceModel {
 public:
  double raw_score(std::string_view prompt, std::string_view response) const override;
};

std::vector<double> normalize_preference(std::span<const double> raw, double delta = 1e-8);

// -- penalties --

enum class ExpectedMode { fast, slow, any };
ExpectedMode parse_expected_mode(std::string_view s);

double validate_format(std::string_view response, ExpectedMode mode);

struct RepetitionPenaltyConfig {
  std::size_t ngram = 4;
  double gamma = 0.1;
};

/// Occurrences of n-grams beyond the first of each distinct value, over max(1, #n-grams).
double repeated_ngram_fraction(std::span<const TokenId> tokens, std::size_t n);
double repetition_penalty(std::span<const TokenId> tokens, const RepetitionPenaltyConfig& cfg);

/// Whitespace words mapped to stable ids, for responses that arrive as text only.
std::vector<TokenId> word_tokens(std::string_view text);

// -- composition --

struct RewardComponents {
  std::optional<double> correctness;
  std::optional<double> preference;
  double format_penalty = 0.0;
  double repetition_penalty = 0.0;
};

struct RewardSignal {
  double total = 0.0;
  RewardComponents components;
  Evaluator evaluator = Evaluator::math;
  bool rejected = false;  // strict format rejection forced the total to -1

  /// Recomputes the total from the components.
  double recompute() const;
};

struct MarsConfig {
  CodeScheme code_scheme = CodeScheme::staged;
  RepetitionPenaltyConfig repetition;
  bool strict_format_reject = false;
  double math_correct = 1.0;
  double math_incorrect = 0.0;
  unsigned code_threads = 4;
};

struct Response {
  std::string text;
  std::vector<TokenId> tokens;  // empty: derived from words of `text`
};

class Mars {
 public:
  Mars(MarsConfig cfg, std::shared_ptr<const CodeRunner> runner,
       std::shared_ptr<const MathVerifier> verifier, std::shared_ptr<const PreferenceModel> preference);

  /// Single response. A lone preference-routed response has no group, so its preference is 0.
  RewardSignal score(const DataSample& sample, const Response& response, ExpectedMode mode) const;
  /// All responses to one prompt; preference scores are normalized within the group.
  std::vector<RewardSignal> score_group(const DataSample& sample, std::span<const Response> responses,
                                        ExpectedMode mode) const;

  const MarsConfig& config() const { return cfg_; }

 private:
  double correctness(const DataSample& sample, const Response& r) const;
  RewardSignal finish(RewardComponents c, Evaluator e) const;
  void add_penalties(RewardComponents& c, const Response& r, ExpectedMode mode) const;

  MarsConfig cfg_;
  std::shared_ptr<const CodeRunner> runner_;
  std::shared_ptr<const MathVerifier> verifier_;
  std::shared_ptr<const PreferenceModel> preference_;
};

/// One JSON object per line: sample id, evaluator, components, total.
void write_audit_record(std::ostream& out, std::string_view sample_id, const RewardSignal& s);

}  // namespace rtrain
