// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// A tabular softmax sequence policy with exact log-probabilities and analytic
// gradients, the sampling loop with the decoding filters, and the
// modular-arithmetic task generator used to exercise the trainers.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/data_pipeline.hpp"
#include "rtrain/param_store.hpp"

namespace rtrain {

class Vocab {
 public:
  static constexpr std::string_view kThinkOpen = "<think>";
  static constexpr std::string_view kThinkClose = "</think>";
  static constexpr std::string_view kEos = "<eos>";

  /// Reserved symbols are appended when missing. Duplicates are rejected.
  explicit Vocab(std::vector<std::string> tokens);

  /// Digits 0-9, "+", "=", "%", the reserved symbols and "<repair>".
  static Vocab toy();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& symbol(TokenId id) const;
  TokenId id(std::string_view symbol) const;
  bool contains(std::string_view symbol) const { return index_.count(std::string(symbol)) > 0; }

  TokenId think_open() const { return think_open_; }
  TokenId think_close() const { return think_close_; }
  TokenId eos() const { return eos_; }

  /// Digits are single tokens; other symbols are matched longest-first; whitespace separates.
  std::vector<TokenId> encode(std::string_view text) const;
  /// Space-joined symbols with runs of digits fused into numbers; stops before <eos>.
  std::string decode(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId think_open_ = -1;
  TokenId think_close_ = -1;
  TokenId eos_ = -1;
};

/// What a next-token model sees: which prompt, and the response tokens so far.
struct DecodeContext {
  std::size_t prompt = 0;
  std::span<const TokenId> tokens;
};

/// Anything that produces next-token logits. Implementations must be safe for
/// concurrent const calls.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual int vocab_size() const = 0;
  virtual Eigen::VectorXd next_logits(const DecodeContext& ctx) const = 0;
};

/// Gradient rows keyed by state; ordered so accumulation is deterministic.
using SparseGrad = std::map<std::size_t, Eigen::VectorXd>;

void accumulate(SparseGrad& into, const SparseGrad& g, double scale = 1.0);
double squared_norm(const SparseGrad& g);

/// Logit table indexed by (prompt slot, position, previous token).
class TabularPolicy final : public SequenceModel {
 public:
  TabularPolicy(std::size_t num_prompts, std::size_t max_positions, int vocab_size);
  TabularPolicy(std::size_t num_prompts, std::size_t max_positions, int vocab_size,
                ParamVector params);

  int vocab_size() const override { return vocab_size_; }
  std::size_t num_prompts() const { return num_prompts_; }
  std::size_t max_positions() const { return max_positions_; }
  std::size_t num_states() const { return num_prompts_ * max_positions_ * (vocab_size_ + 1); }

  /// Positions past the table are folded onto the last position row.
  std::size_t state_index(std::size_t prompt, std::size_t position, TokenId prev) const;
  std::size_t state_for(const DecodeContext& ctx) const;

  Eigen::VectorXd next_logits(const DecodeContext& ctx) const override;
  Eigen::Map<const Eigen::VectorXd> logits_row(std::size_t state) const;
  Eigen::Map<Eigen::VectorXd> mutable_logits_row(std::size_t state);

  double token_logprob(std::size_t state, TokenId token) const;
  /// d logp / d logit(state, v) = 1[v == token] - softmax_v.
  SparseGrad grad_token_logprob(std::size_t state, TokenId token) const;

  /// Sum of per-token log-probabilities of a response under teacher forcing.
  std::vector<double> sequence_logprobs(std::size_t prompt, std::span<const TokenId> tokens) const;

  const ParamVector& params() const { return params_; }
  ParamVector& mutable_params() { return params_; }
  void set_params(ParamVector p);

  /// params += scale * g
  void apply(const SparseGrad& g, double scale);

 private:
  void check_state(std::size_t state) const;

  std::size_t num_prompts_;
  std::size_t max_positions_;
  int vocab_size_;
  ParamVector params_;
};

struct GenerationConfig {
  double temperature = 0.9;
  double top_p = 1.0;
  double nsigma = 1.5;  // +inf disables the filter
  std::size_t max_len = 16;

  void validate() const;
};

/// Sampling distribution after temperature, top-nσ and top-p, as log-probabilities
/// (filtered tokens are -inf).
Eigen::VectorXd filtered_log_distribution(const Eigen::VectorXd& logits, const GenerationConfig& cfg);

/// One categorical draw from the filtered distribution; writes the draw's log-probability.
TokenId sample_next(const SequenceModel& model, const DecodeContext& ctx,
                    const GenerationConfig& cfg, Rng& rng, double* logprob = nullptr);

struct SampledResponse {
  std::vector<TokenId> tokens;  // includes <eos> when generation stopped on it
  std::vector<double> logprobs; // under the sampling distribution
  bool truncated = false;       // hit max_len without <eos>
};

SampledResponse sample_response(const SequenceModel& model, std::size_t prompt,
                                const GenerationConfig& cfg, TokenId eos, std::uint64_t seed);

// -- toy tasks --

struct ToyQuestion {
  int a = 0;
  int b = 0;
  int modulus = 2;
  int answer() const { return (a + b) % modulus; }
};

std::string toy_prompt_text(const ToyQuestion& q);
/// Inverse of toy_prompt_text; throws if the text is not a toy question.
ToyQuestion parse_toy_prompt(std::string_view prompt);

/// Modular-addition questions (a, b in [0,10), modulus in [2,10]) labelled math/verifiable,
/// distinct while count fits the question space.
std::vector<DataSample> make_toy_taskset(std::size_t count, std::uint64_t seed);

}  // namespace rtrain
