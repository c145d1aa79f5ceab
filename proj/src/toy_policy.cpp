// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/toy_policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "rtrain/decoding.hpp"

namespace rtrain {

// -- Vocab --

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::string_view r : {kThinkOpen, kThinkClose, kEos}) {
    if (std::find(tokens_.begin(), tokens_.end(), r) == tokens_.end()) tokens_.emplace_back(r);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw Error("Vocab: empty symbol");
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error("Vocab: duplicate symbol '" + tokens_[i] + "'");
    }
  }
  think_open_ = id(kThinkOpen);
  think_close_ = id(kThinkClose);
  eos_ = id(kEos);
}

Vocab Vocab::toy() {
  std::vector<std::string> t;
  for (int d = 0; d < 10; ++d) t.push_back(std::to_string(d));
  for (const char* s : {"+", "=", "%", "<think>", "</think>", "<eos>", "<repair>"}) t.emplace_back(s);
  return Vocab(std::move(t));
}

const std::string& Vocab::symbol(TokenId id) const {
  if (id < 0 || id >= size()) throw Error("Vocab: token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) throw Error("Vocab: unknown symbol '" + std::string(symbol) + "'");
  return it->second;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (std::isdigit(c)) {
      out.push_back(id(text.substr(i, 1)));
      ++i;
      continue;
    }
    std::size_t best = 0;
    for (const auto& t : tokens_) {
      if (t.size() > best && text.substr(i, t.size()) == t) best = t.size();
    }
    if (best == 0) throw Error("Vocab: cannot encode '" + std::string(text.substr(i, 12)) + "'");
    out.push_back(id(text.substr(i, best)));
    i += best;
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> tokens) const {
  std::string out;
  bool prev_digit = false;
  for (TokenId t : tokens) {
    if (t == eos_) break;
    const std::string& s = symbol(t);
    const bool digit = s.size() == 1 && std::isdigit(static_cast<unsigned char>(s[0]));
    if (!out.empty() && !(digit && prev_digit)) out += ' ';
    out += s;
    prev_digit = digit;
  }
  return out;
}

// -- sparse gradients --

void accumulate(SparseGrad& into, const SparseGrad& g, double scale) {
  for (const auto& [state, row] : g) {
    auto [it, inserted] = into.try_emplace(state, scale * row);
    if (!inserted) it->second += scale * row;
  }
}

double squared_norm(const SparseGrad& g) {
  double s = 0.0;
  for (const auto& [state, row] : g) s += row.squaredNorm();
  return s;
}

// -- TabularPolicy --

TabularPolicy::TabularPolicy(std::size_t num_prompts, std::size_t max_positions, int vocab_size)
    : TabularPolicy(num_prompts, max_positions, vocab_size,
                    ParamVector(static_cast<Eigen::Index>(num_prompts * max_positions *
                                                          (vocab_size + 1) * vocab_size))) {}

TabularPolicy::TabularPolicy(std::size_t num_prompts, std::size_t max_positions, int vocab_size,
                             ParamVector params)
    : num_prompts_(num_prompts),
      max_positions_(max_positions),
      vocab_size_(vocab_size),
      params_(std::move(params)) {
  if (num_prompts == 0 || max_positions == 0 || vocab_size < 2) {
    throw Error("TabularPolicy: empty table");
  }
  if (static_cast<std::size_t>(params_.dim()) != num_states() * static_cast<std::size_t>(vocab_size)) {
    throw Error("TabularPolicy: params.dim != num_states * vocab_size");
  }
  params_.check_finite();
}

std::size_t TabularPolicy::state_index(std::size_t prompt, std::size_t position, TokenId prev) const {
  if (prompt >= num_prompts_) throw Error("TabularPolicy: prompt slot out of range");
  if (prev < -1 || prev >= vocab_size_) throw Error("TabularPolicy: previous token out of range");
  const std::size_t pos = std::min(position, max_positions_ - 1);
  return (prompt * max_positions_ + pos) * static_cast<std::size_t>(vocab_size_ + 1) +
         static_cast<std::size_t>(prev + 1);
}

std::size_t TabularPolicy::state_for(const DecodeContext& ctx) const {
  const TokenId prev = ctx.tokens.empty() ? -1 : ctx.tokens.back();
  return state_index(ctx.prompt, ctx.tokens.size(), prev);
}

void TabularPolicy::check_state(std::size_t state) const {
  if (state >= num_states()) throw Error("TabularPolicy: state out of range");
}

Eigen::Map<const Eigen::VectorXd> TabularPolicy::logits_row(std::size_t state) const {
  check_state(state);
  return {params_.values().data() + state * vocab_size_, vocab_size_};
}

Eigen::Map<Eigen::VectorXd> TabularPolicy::mutable_logits_row(std::size_t state) {
  check_state(state);
  return {params_.mutable_values().data() + state * vocab_size_, vocab_size_};
}

Eigen::VectorXd TabularPolicy::next_logits(const DecodeContext& ctx) const {
  return logits_row(state_for(ctx));
}

double TabularPolicy::token_logprob(std::size_t state, TokenId token) const {
  if (token < 0 || token >= vocab_size_) throw Error("TabularPolicy: token out of range");
  const auto row = logits_row(state);
  return row[token] - log_sum_exp(row);
}

SparseGrad TabularPolicy::grad_token_logprob(std::size_t state, TokenId token) const {
  if (token < 0 || token >= vocab_size_) throw Error("TabularPolicy: token out of range");
  Eigen::VectorXd g = -softmax(logits_row(state));
  g[token] += 1.0;
  return SparseGrad{{state, std::move(g)}};
}

std::vector<double> TabularPolicy::sequence_logprobs(std::size_t prompt,
                                                     std::span<const TokenId> tokens) const {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId prev = t == 0 ? -1 : tokens[t - 1];
    out.push_back(token_logprob(state_index(prompt, t, prev), tokens[t]));
  }
  return out;
}

void TabularPolicy::set_params(ParamVector p) {
  if (p.dim() != params_.dim()) throw Error("TabularPolicy::set_params: dimension mismatch");
  p.check_finite();
  params_ = std::move(p);
}

void TabularPolicy::apply(const SparseGrad& g, double scale) {
  for (const auto& [state, row] : g) mutable_logits_row(state) += scale * row;
}

// -- sampling --

void GenerationConfig::validate() const {
  if (!(temperature > 0.0)) throw Error("GenerationConfig: temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("GenerationConfig: top_p must be in (0,1]");
  if (!(nsigma >= 0.0)) throw Error("GenerationConfig: nsigma must be >= 0");
  if (max_len == 0) throw Error("GenerationConfig: max_len must be positive");
}

Eigen::VectorXd filtered_log_distribution(const Eigen::VectorXd& logits, const GenerationConfig& cfg) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd scaled = logits / cfg.temperature;
  const TokenMask keep_sigma = top_nsigma_filter(scaled, cfg.nsigma);
  Eigen::VectorXd masked = keep_sigma.select(scaled, kNegInf);
  Eigen::VectorXd logp = log_softmax(masked);
  const TokenMask keep_p = top_p_filter(logp.array().exp().matrix(), cfg.top_p) && keep_sigma;
  masked = keep_p.select(scaled, kNegInf);
  return log_softmax(masked);
}

TokenId sample_next(const SequenceModel& model, const DecodeContext& ctx,
                    const GenerationConfig& cfg, Rng& rng, double* logprob) {
  const Eigen::VectorXd logp = filtered_log_distribution(model.next_logits(ctx), cfg);
  const double u = uniform01(rng);
  double cum = 0.0;
  TokenId last_admissible = 0;
  for (Eigen::Index v = 0; v < logp.size(); ++v) {
    if (!std::isfinite(logp[v])) continue;
    last_admissible = static_cast<TokenId>(v);
    cum += std::exp(logp[v]);
    if (u < cum) {
      if (logprob) *logprob = logp[v];
      return static_cast<TokenId>(v);
    }
  }
  // Rounding left u above the accumulated mass.
  if (logprob) *logprob = logp[last_admissible];
  return last_admissible;
}

SampledResponse sample_response(const SequenceModel& model, std::size_t prompt,
                                const GenerationConfig& cfg, TokenId eos, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SampledResponse out;
  while (out.tokens.size() < cfg.max_len) {
    double lp = 0.0;
    const TokenId t = sample_next(model, {prompt, out.tokens}, cfg, rng, &lp);
    out.tokens.push_back(t);
    out.logprobs.push_back(lp);
    if (t == eos) return out;
  }
  out.truncated = true;
  return out;
}

// -- toy tasks --

std::string toy_prompt_text(const ToyQuestion& q) {
  return "(" + std::to_string(q.a) + " + " + std::to_string(q.b) + ") mod " +
         std::to_string(q.modulus) + " = ?";
}

ToyQuestion parse_toy_prompt(std::string_view prompt) {
  // Only the question suffix matters; few-shot prefixes end before the last '('.
  const auto open = prompt.rfind('(');
  if (open == std::string_view::npos) throw Error("not a toy question");
  const std::string tail(prompt.substr(open));
  ToyQuestion q;
  char tail_char = 0;
  if (std::sscanf(tail.c_str(), "(%d + %d) mod %d = %c", &q.a, &q.b, &q.modulus, &tail_char) != 4 ||
      tail_char != '?' || q.modulus < 2) {
    throw Error("not a toy question: '" + tail + "'");
  }
  return q;
}

std::vector<DataSample> make_toy_taskset(std::size_t count, std::uint64_t seed) {
  if (count == 0) throw Error("make_toy_taskset: count must be >= 1");
  std::vector<ToyQuestion> space;
  for (int m = 2; m <= 10; ++m) {
    for (int a = 0; a < 10; ++a) {
      for (int b = 0; b < 10; ++b) space.push_back({a, b, m});
    }
  }
  Rng rng(derive_seed(seed, "taskset"));
  for (std::size_t i = space.size() - 1; i > 0; --i) {
    std::swap(space[i], space[uniform_index(rng, i + 1)]);
  }
  std::vector<DataSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const ToyQuestion& q = space[i % space.size()];
    DataSample s;
    char id[32];
    std::snprintf(id, sizeof id, "toy-%06zu", i);
    s.id = id;
    s.prompt = toy_prompt_text(q);
    s.reference_answer = std::to_string(q.answer());
    s.task_label = TaskLabel::math;
    s.annotations.subcategory = "modular_addition";
    s.annotations.question_type = "arithmetic";
    s.annotations.verifiable = true;
    const int sum = q.a + q.b;
    s.annotations.computation_complexity = 1 + (sum >= 10) + (sum >= q.modulus);
    s.annotations.thinking_complexity = 1 + (sum >= q.modulus);
    s.source = "toy";
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rtrain
