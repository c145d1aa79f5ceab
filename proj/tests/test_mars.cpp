// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "rtrain/code_runner.hpp"
#include "rtrain/common.hpp"
#include "rtrain/mars.hpp"

using namespace rtrain;

namespace {

const char* kDoubler = "```\nread x\nprint x * 2\n```";

std::vector<CodeTestCase> doubler_cases(int wrong) {
  std::vector<CodeTestCase> cases;
  for (int i = 1; i <= 4; ++i) cases.push_back({std::to_string(i), std::to_string(i < wrong + 1 ? -1 : 2 * i), 1000});
  return cases;
}

// Fraction of n-gram positions whose n-gram already occurred earlier.
double brute_repeat_fraction(const std::vector<TokenId>& t, std::size_t n) {
  if (t.size() < n) return 0.0;
  const std::size_t m = t.size() - n + 1;
  std::size_t rep = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::equal(t.begin() + i, t.begin() + i + n, t.begin() + j)) {
        ++rep;
        break;
      }
    }
  }
  return static_cast<double>(rep) / static_cast<double>(m);
}

Mars make_mars(MarsConfig cfg = {}) {
  return Mars(cfg, std::make_shared<ToyInterpreterRunner>(), std::make_shared<MockLlmVerifier>(),
              std::make_shared<MockPreferenceModel>());
}

DataSample code_sample(std::vector<CodeTestCase> cases) {
  DataSample s;
  s.id = "c";
  s.prompt = "double it";
  s.task_label = TaskLabel::code;
  s.test_cases = std::move(cases);
  return s;
}

}  // namespace

TEST_CASE("routing by task label") {
  DataSample s;
  s.task_label = TaskLabel::math;
  CHECK(route(s) == Evaluator::math);
  s.task_label = TaskLabel::code;
  CHECK(route(s) == Evaluator::code);
  s.task_label = TaskLabel::general;
  CHECK(route(s) == Evaluator::preference);
}

TEST_CASE("toy interpreter runs and rejects bad programs") {
  ToyInterpreterRunner r;
  CHECK(r.check_syntax("read x\nprint x * 2"));
  CHECK_FALSE(r.check_syntax("print (1 +"));
  const auto out = r.run("read x; let s = 0; while x > 0; let s = s + x; let x = x - 1; end; print s", "4",
                         std::chrono::milliseconds(100));
  CHECK(out.exit_status == 0);
  CHECK(out.stdout_text == "10\n");
  CHECK(r.run("print 1 / 0", "", std::chrono::milliseconds(100)).exit_status == 1);
  CHECK(r.run("while 1; end", "", std::chrono::milliseconds(5)).timed_out);
}

TEST_CASE("staged code rewards") {
  ToyInterpreterRunner r;
  const auto s = CodeScheme::staged;
  CHECK(reward_code("no code here", doubler_cases(0), s, r) == doctest::Approx(-0.8));
  CHECK(reward_code("```\nprint (\n```", doubler_cases(0), s, r) == doctest::Approx(-0.8));
  CHECK(reward_code(kDoubler, doubler_cases(4), s, r) == doctest::Approx(-0.5));
  CHECK(reward_code(kDoubler, doubler_cases(2), s, r) == doctest::Approx(0.1));
  CHECK(reward_code(kDoubler, doubler_cases(0), s, r) == doctest::Approx(1.0));
}

TEST_CASE("continuous code rewards") {
  ToyInterpreterRunner r;
  const auto c = CodeScheme::continuous;
  CHECK(reward_code(kDoubler, doubler_cases(2), c, r) == doctest::Approx(0.0));
  CHECK(reward_code(kDoubler, doubler_cases(0), c, r) == doctest::Approx(1.0));
  CHECK(reward_code(kDoubler, doubler_cases(4), c, r) == doctest::Approx(-0.5));
  CHECK(reward_code(kDoubler, doubler_cases(1), c, r) == doctest::Approx(0.25));
  CHECK(reward_code("nothing", doubler_cases(0), c, r) == doctest::Approx(-0.8));
  CHECK_THROWS_AS(reward_code(kDoubler, {}, c, r), Error);
}

TEST_CASE("output comparison ignores trailing whitespace") {
  CHECK(outputs_match("4  \n\n", "4"));
  CHECK_FALSE(outputs_match("4\n5", "4"));
}

TEST_CASE("numeric answers compare by value") {
  CHECK(verify_math("the answer is 1/2", "0.5"));
  CHECK(verify_math("\\boxed{0.5}", "1/2"));
  CHECK(verify_math("<think> 3 + 4 = 7 </think> 7", "7"));
  CHECK_FALSE(verify_math("<think> 7 </think> 8", "7"));
  CHECK(extract_final_answer("x = \\boxed{\\frac{1}{2}} done") == std::string("\\frac{1}{2}"));
  CHECK(parse_numeric("3 / 4") == doctest::Approx(0.75));
  CHECK_FALSE(parse_numeric("1/0"));
}

TEST_CASE("unverifiable math without a verifier verdict throws") {
  CHECK_THROWS_AS(verify_math("no idea", "x^2"), UnverifiableError);
  MockLlmVerifier v;
  CHECK(verify_math("yes", "Yes", &v));
  CHECK(verify_math("answer: x^2", "x^2"));
  CHECK_FALSE(verify_math("no idea", "x^2", &v));
  CHECK_THROWS_AS(verify_math("1", " "), Error);
}

TEST_CASE("preference normalisation") {
  const std::vector<double> two = {2.0, 0.0};
  const auto n = normalize_preference(two);
  CHECK(n[0] == doctest::Approx(0.7616).epsilon(1e-4));
  CHECK(n[1] == doctest::Approx(-0.7616).epsilon(1e-4));
  const std::vector<double> same = {3.0, 3.0, 3.0};
  for (double x : normalize_preference(same)) CHECK(x == 0.0);
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> raw(6);
    for (auto& x : raw) x = uniform01(rng) * 20 - 10;
    for (double x : normalize_preference(raw)) CHECK(std::abs(x) < 1.0);
  }
}

TEST_CASE("format validation by expected mode") {
  CHECK(validate_format("<think> a </think> b", ExpectedMode::slow) == 0.0);
  CHECK(validate_format("b", ExpectedMode::slow) == -1.0);
  CHECK(validate_format("b", ExpectedMode::fast) == 0.0);
  CHECK(validate_format("<think> a </think> b", ExpectedMode::fast) == -1.0);
  CHECK(validate_format("<think> a </think> b <think> c </think>", ExpectedMode::any) == -1.0);
  CHECK(validate_format("<think> a", ExpectedMode::any) == -1.0);
  CHECK(validate_format("x <think> a </think>", ExpectedMode::slow) == -1.0);
}

TEST_CASE("repetition fraction matches a brute-force count") {
  Rng rng(derive_seed(4, "rep"));
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TokenId> t(uniform_index(rng, 40));
    const auto vocab = 2 + uniform_index(rng, 5);
    for (auto& x : t) x = static_cast<TokenId>(uniform_index(rng, vocab));
    for (std::size_t n : {1u, 2u, 4u}) {
      CHECK(repeated_ngram_fraction(t, n) == doctest::Approx(brute_repeat_fraction(t, n)));
    }
    RepetitionPenaltyConfig cfg;
    CHECK(repetition_penalty(t, cfg) == doctest::Approx(-0.1 * brute_repeat_fraction(t, 4)));
  }
  const std::vector<TokenId> loop = {1, 2, 1, 2, 1, 2, 1, 2};
  CHECK(repeated_ngram_fraction(loop, 2) == doctest::Approx(5.0 / 7.0));
}

TEST_CASE("reward composition") {
  const Mars m = make_mars();
  DataSample math;
  math.id = "m";
  math.prompt = "(1 + 2) mod 3 = ?";
  math.task_label = TaskLabel::math;
  math.reference_answer = "0";
  const auto wrong = m.score(math, {"1", {}}, ExpectedMode::fast);
  CHECK(wrong.total == doctest::Approx(0.0));
  CHECK(*wrong.components.correctness == 0.0);
  CHECK(m.score(math, {"0", {}}, ExpectedMode::fast).total == doctest::Approx(1.0));
  CHECK(m.score(math, {"0", {}}, ExpectedMode::slow).total == doctest::Approx(0.0));

  const auto partial = m.score(code_sample(doubler_cases(2)), {kDoubler, {}}, ExpectedMode::slow);
  CHECK(*partial.components.correctness == doctest::Approx(0.1));
  CHECK(partial.components.format_penalty == -1.0);
  CHECK(partial.total == doctest::Approx(-0.9));
  CHECK(partial.recompute() == doctest::Approx(partial.total));

  MarsConfig strict;
  strict.strict_format_reject = true;
  const auto rej = make_mars(strict).score(math, {"0", {}}, ExpectedMode::slow);
  CHECK(rej.rejected);
  CHECK(rej.total == -1.0);
}

TEST_CASE("totals stay in [-1, 1]") {
  const Mars m = make_mars();
  DataSample g;
  g.id = "g";
  g.prompt = "describe the sea";
  g.task_label = TaskLabel::general;
  std::vector<Response> rs = {{"the sea the sea the sea the sea the sea", {}},
                              {"<think> waves", {}},
                              {"the sea is blue and wide and deep", {}}};
  for (const auto& s : m.score_group(g, rs, ExpectedMode::fast)) {
    CHECK(s.total >= -1.0);
    CHECK(s.total <= 1.0);
    CHECK(s.evaluator == Evaluator::preference);
  }
  CHECK(*m.score(g, rs[2], ExpectedMode::fast).components.preference == 0.0);
}

TEST_CASE("audit records are JSON lines") {
  const Mars m = make_mars();
  std::ostringstream out;
  const auto s = m.score(code_sample(doubler_cases(0)), {kDoubler, {}}, ExpectedMode::fast);
  write_audit_record(out, "c", s);
  const auto j = nlohmann::json::parse(out.str());
  CHECK(j["sample_id"] == "c");
  CHECK(j["evaluator"] == "code");
  CHECK(j["components"]["preference"].is_null());
  CHECK(j["total"].get<double>() == doctest::Approx(s.total));
}
