// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Local n-gram repetition detection over a sliding window, and a generation
// wrapper that injects a control prompt when a loop is flagged.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rtrain/common.hpp"
#include "rtrain/toy_policy.hpp"

namespace rtrain {

struct DetectorConfig {
  std::size_t ngram_size = 512;  // tail length
  std::size_t window = 1024;     // comparison window preceding the tail
  double jaccard_threshold = 0.6;
  std::size_t t_detect = 2048;
  std::size_t subgram = 16;      // set elements are contiguous subgrams of this size
  std::vector<TokenId> control_prompt;

  void validate() const;
};

enum class DetectionAction { flagged, prompt_injected };

struct DetectionEvent {
  std::size_t position = 0;      // decoded tokens so far (injected tokens excluded)
  std::size_t output_index = 0;  // index in the output where the check happened
  double similarity = 0.0;
  DetectionAction action = DetectionAction::flagged;
};

/// |A ∩ B| / |A ∪ B|; two empty sets give 0.
template <class Set>
double jaccard(const Set& a, const Set& b) {
  if (a.empty() && b.empty()) return 0.0;
  const Set& small = a.size() <= b.size() ? a : b;
  const Set& large = a.size() <= b.size() ? b : a;
  std::size_t inter = 0;
  for (const auto& x : small) inter += large.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

/// Jaccard between the subgram sets of the last ngram_size tokens and of the
/// window tokens before them; nullopt when fewer than window + ngram_size tokens.
/// `ops` counts hash updates and set operations.
std::optional<double> tail_window_similarity(std::span<const TokenId> tokens, const DetectorConfig& cfg,
                                             std::uint64_t* ops = nullptr);

/// Flags iff the similarity exceeds the threshold.
std::optional<DetectionEvent> detect_local_repetition(std::span<const TokenId> tokens, const DetectorConfig& cfg,
                                                      std::uint64_t* ops = nullptr);

struct GenerationState {
  std::vector<TokenId> tokens;     // full output, injected prompts included
  std::vector<bool> loss_mask;     // false on injected tokens
  std::size_t window_origin = 0;   // detection only looks at tokens from here
  std::size_t decoded = 0;
  std::vector<DetectionEvent> events;
};

/// Appends the control prompt (loss-masked), moves the window origin past it and records the event.
void inject_control_prompt(GenerationState& state, const DetectorConfig& cfg, DetectionEvent event);

struct RepairResult {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;  // 0 on injected tokens
  std::vector<bool> loss_mask;
  std::vector<DetectionEvent> events;
  bool truncated = false;        // output reached max_len without <eos>
};

/// sample_response with a detection check every t_detect decoded tokens. max_len
/// bounds the whole output, injected prompts included. With inject=false the
/// checks still run and flagged events are recorded, but generation is untouched.
RepairResult self_repair_generate(const SequenceModel& model, std::size_t prompt, const GenerationConfig& gen,
                                  const DetectorConfig& det, TokenId eos, std::uint64_t seed,
                                  bool inject = true);

/// Output with injected tokens removed.
std::vector<TokenId> strip_injected(const RepairResult& r);

/// Emits `loop` cyclically until the context contains `escape`, then emits `eos`.
class ForcedLoopModel final : public SequenceModel {
 public:
  ForcedLoopModel(int vocab_size, std::vector<TokenId> loop, TokenId escape, TokenId eos,
                  double margin = 20.0);
  int vocab_size() const override { return vocab_size_; }
  Eigen::VectorXd next_logits(const DecodeContext& ctx) const override;

 private:
  int vocab_size_;
  std::vector<TokenId> loop_;
  TokenId escape_;
  TokenId eos_;
  double margin_;
};

}  // namespace rtrain
