// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/repetition_guard.hpp"

#include <algorithm>
#include <unordered_set>

#include "rtrain/rolling_hash.hpp"

namespace rtrain {

void DetectorConfig::validate() const {
  if (window == 0 || ngram_size == 0) throw Error("DetectorConfig: window and ngram_size must be positive");
  if (ngram_size > window) throw Error("DetectorConfig: ngram_size must be <= window");
  if (subgram == 0 || subgram > ngram_size) throw Error("DetectorConfig: subgram must be in [1, ngram_size]");
  if (t_detect < 1) throw Error("DetectorConfig: t_detect must be >= 1");
  if (!(jaccard_threshold > 0.0 && jaccard_threshold <= 1.0)) {
    throw Error("DetectorConfig: jaccard_threshold must be in (0, 1]");
  }
}

std::optional<double> tail_window_similarity(std::span<const TokenId> tokens, const DetectorConfig& cfg,
                                             std::uint64_t* ops) {
  cfg.validate();
  if (tokens.size() < cfg.window + cfg.ngram_size) return std::nullopt;
  const auto tail = tokens.last(cfg.ngram_size);
  const auto prev = tokens.subspan(tokens.size() - cfg.ngram_size - cfg.window, cfg.window);
  auto build = [&](std::span<const TokenId> part) {
    std::unordered_set<std::uint64_t> s;
    const auto h = RollingHash::ngram_hashes(part, cfg.subgram, ops);
    s.reserve(h.size());
    s.insert(h.begin(), h.end());
    if (ops) *ops += h.size();
    return s;
  };
  const auto a = build(tail);
  const auto b = build(prev);
  if (ops) *ops += std::min(a.size(), b.size());
  return jaccard(a, b);
}

std::optional<DetectionEvent> detect_local_repetition(std::span<const TokenId> tokens, const DetectorConfig& cfg,
                                                      std::uint64_t* ops) {
  const auto sim = tail_window_similarity(tokens, cfg, ops);
  if (!sim || !(*sim > cfg.jaccard_threshold)) return std::nullopt;
  DetectionEvent e;
  e.position = tokens.size();
  e.output_index = tokens.size();
  e.similarity = *sim;
  e.action = DetectionAction::flagged;
  return e;
}

void inject_control_prompt(GenerationState& state, const DetectorConfig& cfg, DetectionEvent event) {
  if (cfg.control_prompt.empty()) throw Error("inject_control_prompt: control prompt is empty");
  state.tokens.insert(state.tokens.end(), cfg.control_prompt.begin(), cfg.control_prompt.end());
  state.loss_mask.insert(state.loss_mask.end(), cfg.control_prompt.size(), false);
  state.window_origin = state.tokens.size();
  event.action = DetectionAction::prompt_injected;
  state.events.push_back(event);
}

RepairResult self_repair_generate(const SequenceModel& model, std::size_t prompt, const GenerationConfig& gen,
                                  const DetectorConfig& det, TokenId eos, std::uint64_t seed, bool inject) {
  gen.validate();
  det.validate();
  Rng rng(seed);
  GenerationState st;
  RepairResult out;
  while (st.tokens.size() < gen.max_len) {
    double lp = 0.0;
    const TokenId t = sample_next(model, {prompt, st.tokens}, gen, rng, &lp);
    st.tokens.push_back(t);
    st.loss_mask.push_back(true);
    out.logprobs.push_back(lp);
    ++st.decoded;
    if (t == eos) break;
    if (st.decoded % det.t_detect == 0) {
      const std::span<const TokenId> local(st.tokens.data() + st.window_origin, st.tokens.size() - st.window_origin);
      if (auto ev = detect_local_repetition(local, det)) {
        ev->position = st.decoded;
        ev->output_index = st.tokens.size();
        if (inject) {
          inject_control_prompt(st, det, *ev);
          out.logprobs.resize(st.tokens.size(), 0.0);
        } else {
          st.events.push_back(*ev);
        }
      }
    }
  }
  out.truncated = st.tokens.empty() || st.tokens.back() != eos;
  out.tokens = std::move(st.tokens);
  out.loss_mask = std::move(st.loss_mask);
  out.events = std::move(st.events);
  return out;
}

std::vector<TokenId> strip_injected(const RepairResult& r) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    if (r.loss_mask[i]) out.push_back(r.tokens[i]);
  }
  return out;
}

ForcedLoopModel::ForcedLoopModel(int vocab_size, std::vector<TokenId> loop, TokenId escape, TokenId eos,
                                 double margin)
    : vocab_size_(vocab_size), loop_(std::move(loop)), escape_(escape), eos_(eos), margin_(margin) {
  if (loop_.empty()) throw Error("ForcedLoopModel: empty loop");
  for (TokenId t : loop_) {
    if (t < 0 || t >= vocab_size_) throw Error("ForcedLoopModel: loop token out of range");
  }
  if (eos_ < 0 || eos_ >= vocab_size_) throw Error("ForcedLoopModel: eos out of range");
}

Eigen::VectorXd ForcedLoopModel::next_logits(const DecodeContext& ctx) const {
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(vocab_size_);
  const bool escaped = std::find(ctx.tokens.begin(), ctx.tokens.end(), escape_) != ctx.tokens.end();
  const TokenId target = escaped ? eos_ : loop_[ctx.tokens.size() % loop_.size()];
  logits[target] = margin_;
  return logits;
}

}  // namespace rtrain
