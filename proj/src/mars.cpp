// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/mars.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <regex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "rtrain/rolling_hash.hpp"
#include "rtrain/think_format.hpp"

namespace rtrain {

std::string_view to_string(Evaluator e) {
  switch (e) {
    case Evaluator::math: return "math";
    case Evaluator::code: return "code";
    case Evaluator::preference: return "preference";
  }
  return "?";
}

Evaluator route(const DataSample& sample) {
  switch (sample.task_label) {
    case TaskLabel::math: return Evaluator::math;
    case TaskLabel::code: return Evaluator::code;
    case TaskLabel::general: return Evaluator::preference;
  }
  throw Error("route: unknown task label");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  return out;
}

// Text after the last closing think tag, or everything.
std::string_view answer_region(std::string_view response) {
  const auto close = response.rfind(kThinkCloseTag);
  return close == std::string_view::npos ? response : response.substr(close + kThinkCloseTag.size());
}

std::optional<std::string> last_boxed(std::string_view text) {
  const auto pos = text.rfind("\\boxed{");
  if (pos == std::string_view::npos) return std::nullopt;
  int depth = 1;
  const std::size_t begin = pos + 7;
  for (std::size_t i = begin; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return trim(text.substr(begin, i - begin));
  }
  return std::nullopt;
}

std::optional<std::string> labelled(std::string_view text) {
  const std::string low = lower(text);
  std::size_t best = std::string::npos;
  std::size_t skip = 0;
  for (std::string_view label : {"answer:", "answer is"}) {
    const auto p = low.rfind(label);
    if (p != std::string::npos && (best == std::string::npos || p > best)) {
      best = p;
      skip = label.size();
    }
  }
  if (best == std::string::npos) return std::nullopt;
  std::string_view rest = text.substr(best + skip);
  rest = rest.substr(0, rest.find('\n'));
  std::string out = trim(rest);
  while (!out.empty() && (out.back() == '.' || out.back() == '$')) out.pop_back();
  while (!out.empty() && out.front() == '$') out.erase(out.begin());
  out = trim(out);
  if (out.empty()) return std::nullopt;
  return out;
}

const std::regex& number_re() {
  static const std::regex re(R"([-+]?(\d+(\.\d*)?|\.\d+)(\s*/\s*\d+)?)");
  return re;
}

}  // namespace

std::optional<std::string> extract_final_answer(std::string_view response) {
  const std::string_view region = answer_region(response);
  if (auto b = last_boxed(region)) return b;
  if (auto l = labelled(region)) return l;
  std::optional<std::string> last;
  const std::string text(region);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number_re()); it != std::sregex_iterator(); ++it) {
    last = it->str();
  }
  return last;
}

std::optional<long double> parse_numeric(std::string_view text) {
  const std::string s = squash(text);
  static const std::regex dec(R"([-+]?(\d+(\.\d*)?|\.\d+))");
  static const std::regex rat(R"(([-+]?\d+)/([-+]?\d+))");
  std::smatch m;
  if (std::regex_match(s, dec)) return std::strtold(s.c_str(), nullptr);
  if (std::regex_match(s, m, rat)) {
    const long double den = std::strtold(m[2].str().c_str(), nullptr);
    if (den == 0.0L) return std::nullopt;
    return std::strtold(m[1].str().c_str(), nullptr) / den;
  }
  return std::nullopt;
}

std::optional<bool> MockLlmVerifier::judge(std::string_view response, std::string_view ground_truth) const {
  const std::string gt = squash(ground_truth);
  if (gt.empty()) return std::nullopt;
  std::string candidate;
  if (auto a = extract_final_answer(response)) {
    candidate = *a;
  } else {
    const std::string_view region = answer_region(response);
    const std::string t = trim(region);
    candidate = t.substr(t.rfind('\n') == std::string::npos ? 0 : t.rfind('\n') + 1);
  }
  return squash(candidate) == gt;
}

bool verify_math(std::string_view response, std::string_view ground_truth, const MathVerifier* verifier) {
  if (trim(ground_truth).empty()) throw Error("verify_math: ground truth missing");
  if (const auto answer = extract_final_answer(response)) {
    const auto a = parse_numeric(*answer);
    const auto g = parse_numeric(ground_truth);
    if (a && g) {
      const long double scale = std::max({1.0L, std::fabs(*a), std::fabs(*g)});
      return std::fabs(*a - *g) <= 1e-9L * scale;
    }
    if (squash(*answer) == squash(ground_truth)) return true;
  }
  if (verifier != nullptr) {
    if (const auto v = verifier->judge(response, ground_truth)) return *v;
  }
  throw UnverifiableError("verify_math: no verdict from rule check or verifier");
}

CodeScheme parse_code_scheme(std::string_view s) {
  if (s == "staged") return CodeScheme::staged;
  if (s == "continuous") return CodeScheme::continuous;
  throw Error("unknown code reward scheme '" + std::string(s) + "'");
}

double CodeExecResult::pass_rate() const {
  if (per_case.empty()) return 0.0;
  const auto passed = std::count_if(per_case.begin(), per_case.end(), [](const CaseResult& c) { return c.pass; });
  return static_cast<double>(passed) / static_cast<double>(per_case.size());
}

std::optional<std::string> extract_code(std::string_view response) {
  std::optional<std::string> last;
  std::size_t pos = 0;
  while (true) {
    const auto open = response.find("```", pos);
    if (open == std::string_view::npos) break;
    const auto line_end = response.find('\n', open);
    if (line_end == std::string_view::npos) break;
    const auto close = response.find("```", line_end + 1);
    if (close == std::string_view::npos) break;
    last = std::string(response.substr(line_end + 1, close - line_end - 1));
    pos = close + 3;
  }
  return last;
}

bool outputs_match(std::string_view actual, std::string_view expected) {
  auto normalize = [](std::string_view s) {
    std::vector<std::string> lines;
    std::istringstream in{std::string(s)};
    for (std::string line; std::getline(in, line);) {
      const auto e = line.find_last_not_of(" \t\r");
      lines.push_back(e == std::string::npos ? "" : line.substr(0, e + 1));
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
  };
  return normalize(actual) == normalize(expected);
}

CodeExecResult execute_code(std::string_view response, std::span<const CodeTestCase> cases,
                            const CodeRunner& runner, unsigned threads) {
  CodeExecResult out;
  const auto program = extract_code(response);
  if (!program) return out;
  out.stage_reached = CodeStage::syntax;
  out.syntax_ok = runner.check_syntax(*program);
  if (!out.syntax_ok) return out;
  out.stage_reached = CodeStage::execution;

  std::vector<CaseResult> results(cases.size());
  std::vector<std::exception_ptr> errors(cases.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      try {
        if (cases[i].timeout_ms <= 0) throw Error("CodeTestCase: timeout must be positive");
        const RunOutcome r = runner.run(*program, cases[i].input, std::chrono::milliseconds(cases[i].timeout_ms));
        results[i].pass = !r.timed_out && r.exit_status == 0 && outputs_match(r.stdout_text, cases[i].expected_output);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cases.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  out.per_case = std::move(results);
  out.stage_reached = CodeStage::comparison;
  return out;
}

double code_reward(const CodeExecResult& result, CodeScheme scheme) {
  if (result.stage_reached != CodeStage::comparison) return -0.8;
  if (result.per_case.empty()) throw Error("code_reward: no test cases");
  const double rate = result.pass_rate();
  if (rate == 1.0) return 1.0;
  if (scheme == CodeScheme::continuous) return -0.5 + rate;
  return rate == 0.0 ? -0.5 : 0.1;
}

double reward_code(std::string_view response, std::span<const CodeTestCase> cases, CodeScheme scheme,
                   const CodeRunner& runner, unsigned threads) {
  if (cases.empty()) throw Error("reward_code: no test cases");
  return code_reward(execute_code(response, cases, runner, threads), scheme);
}

double MockPreferenceModel::raw_score(std::string_view prompt, std::string_view response) const {
  auto words = [](std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  };
  const auto pw = words(prompt);
  const auto rw = words(response);
  const std::set<std::string> prompt_set(pw.begin(), pw.end());
  const std::set<std::string> distinct(rw.begin(), rw.end());
  double overlap = 0.0;
  for (const auto& w : distinct) overlap += prompt_set.count(w) ? 1.0 : 0.0;
  const double excess = rw.size() > 200 ? static_cast<double>(rw.size() - 200) : 0.0;
  return overlap + 0.1 * static_cast<double>(distinct.size()) - 0.05 * excess;
}

std::vector<double> normalize_preference(std::span<const double> raw, double delta) {
  if (raw.size() < 2) throw Error("normalize_preference: G must be >= 2");
  std::vector<double> out(raw.size(), 0.0);
  if (std::all_of(raw.begin(), raw.end(), [&](double r) { return r == raw[0]; })) return out;
  double mean = 0.0;
  for (double r : raw) mean += r;
  mean /= static_cast<double>(raw.size());
  double var = 0.0;
  for (double r : raw) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::tanh((raw[i] - mean) / (sd + delta));
  return out;
}

ExpectedMode parse_expected_mode(std::string_view s) {
  if (s == "fast") return ExpectedMode::fast;
  if (s == "slow") return ExpectedMode::slow;
  if (s == "any") return ExpectedMode::any;
  throw Error("unknown expected mode '" + std::string(s) + "'");
}

double validate_format(std::string_view response, ExpectedMode mode) {
  const ThinkTags t = scan_think_tags(response);
  bool ok = false;
  switch (mode) {
    case ExpectedMode::slow: ok = t.single_leading_block(); break;
    case ExpectedMode::fast: ok = t.none(); break;
    case ExpectedMode::any: ok = t.none() || t.single_leading_block(); break;
  }
  return ok ? 0.0 : -1.0;
}

double repeated_ngram_fraction(std::span<const TokenId> tokens, std::size_t n) {
  if (n == 0) throw Error("repeated_ngram_fraction: n must be positive");
  const auto hashes = RollingHash::ngram_hashes(tokens, n);
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> seen;  // hash -> starts of distinct n-grams
  std::size_t repeated = 0;
  for (std::size_t i = 0; i < hashes.size(); ++i) {
    auto& starts = seen[hashes[i]];
    const bool dup = std::any_of(starts.begin(), starts.end(), [&](std::size_t p) {
      return std::equal(tokens.begin() + static_cast<std::ptrdiff_t>(p),
                        tokens.begin() + static_cast<std::ptrdiff_t>(p + n),
                        tokens.begin() + static_cast<std::ptrdiff_t>(i));
    });
    if (dup) {
      ++repeated;
    } else {
      starts.push_back(i);
    }
  }
  return static_cast<double>(repeated) / static_cast<double>(std::max<std::size_t>(1, hashes.size()));
}

double repetition_penalty(std::span<const TokenId> tokens, const RepetitionPenaltyConfig& cfg) {
  if (!(cfg.gamma >= 0.0)) throw Error("repetition_penalty: gamma must be >= 0");
  return -cfg.gamma * repeated_ngram_fraction(tokens, cfg.ngram);
}

std::vector<TokenId> word_tokens(std::string_view text) {
  std::vector<TokenId> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(static_cast<TokenId>(fnv1a(w) & 0x7fffffff));
  return out;
}

double RewardSignal::recompute() const {
  if (rejected) return -1.0;
  const double primary = components.correctness.value_or(0.0) + components.preference.value_or(0.0);
  return std::clamp(primary + components.format_penalty + components.repetition_penalty, -1.0, 1.0);
}

Mars::Mars(MarsConfig cfg, std::shared_ptr<const CodeRunner> runner,
           std::shared_ptr<const MathVerifier> verifier, std::shared_ptr<const PreferenceModel> preference)
    : cfg_(std::move(cfg)),
      runner_(std::move(runner)),
      verifier_(std::move(verifier)),
      preference_(std::move(preference)) {}

double Mars::correctness(const DataSample& sample, const Response& r) const {
  if (route(sample) == Evaluator::math) {
    if (!sample.reference_answer) throw Error("score: math sample '" + sample.id + "' has no reference answer");
    return verify_math(r.text, *sample.reference_answer, verifier_.get()) ? cfg_.math_correct : cfg_.math_incorrect;
  }
  if (!runner_) throw Error("score: no code runner configured");
  return reward_code(r.text, sample.test_cases, cfg_.code_scheme, *runner_, cfg_.code_threads);
}

void Mars::add_penalties(RewardComponents& c, const Response& r, ExpectedMode mode) const {
  c.format_penalty = validate_format(r.text, mode);
  if (r.tokens.empty()) {
    c.repetition_penalty = repetition_penalty(word_tokens(r.text), cfg_.repetition);
  } else {
    c.repetition_penalty = repetition_penalty(r.tokens, cfg_.repetition);
  }
}

RewardSignal Mars::finish(RewardComponents c, Evaluator e) const {
  RewardSignal s;
  s.components = c;
  s.evaluator = e;
  s.rejected = cfg_.strict_format_reject && c.format_penalty < 0.0;
  s.total = s.recompute();
  return s;
}

RewardSignal Mars::score(const DataSample& sample, const Response& response, ExpectedMode mode) const {
  const Evaluator e = route(sample);
  RewardComponents c;
  if (e == Evaluator::preference) {
    c.preference = 0.0;
  } else {
    c.correctness = correctness(sample, response);
  }
  add_penalties(c, response, mode);
  return finish(c, e);
}

std::vector<RewardSignal> Mars::score_group(const DataSample& sample, std::span<const Response> responses,
                                            ExpectedMode mode) const {
  const Evaluator e = route(sample);
  std::vector<RewardSignal> out;
  out.reserve(responses.size());
  if (e != Evaluator::preference) {
    for (const auto& r : responses) out.push_back(score(sample, r, mode));
    return out;
  }
  if (!preference_) throw Error("score_group: no preference model configured");
  std::vector<double> normalized(responses.size(), 0.0);
  if (responses.size() >= 2) {
    std::vector<double> raw;
    for (const auto& r : responses) raw.push_back(preference_->raw_score(sample.prompt, r.text));
    normalized = normalize_preference(raw);
  }
  for (std::size_t i = 0; i < responses.size(); ++i) {
    RewardComponents c;
    c.preference = normalized[i];
    add_penalties(c, responses[i], mode);
    out.push_back(finish(c, e));
  }
  return out;
}

void write_audit_record(std::ostream& out, std::string_view sample_id, const RewardSignal& s) {
  nlohmann::json j;
  j["sample_id"] = sample_id;
  j["evaluator"] = to_string(s.evaluator);
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["components"] = {{"correctness", opt(s.components.correctness)},
                     {"preference", opt(s.components.preference)},
                     {"format_penalty", s.components.format_penalty},
                     {"repetition_penalty", s.components.repetition_penalty}};
  j["rejected"] = s.rejected;
  j["total"] = s.total;
  out << j.dump() << '\n';
}

}  // namespace rtrain
