// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// The narrow program-execution contract used by the code reward pipeline:
// send program text and stdin, get stdout and an exit status under a timeout.

#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <vector>

namespace rtrain {

struct RunOutcome {
  std::string stdout_text;
  int exit_status = 0;
  bool timed_out = false;
};

class CodeRunner {
 public:
  virtual ~CodeRunner() = default;
  virtual bool check_syntax(std::string_view program) const = 0;
  /// Throws rtrain::Error when the runner itself fails (cannot spawn, killed by a
  /// signal it did not send). Program errors are reported through exit_status.
  virtual RunOutcome run(std::string_view program, std::string_view stdin_text,
                         std::chrono::milliseconds timeout) const = 0;
};

/// In-process interpreter for a tiny integer language, so reward tests run hermetically.
///
///   read x            pop the next whitespace-separated integer from stdin
///   let x = expr      assignment
///   print expr        write the value and a newline
///   while expr ... end
///
/// Statements end at newlines or ';'. Expressions support integers, variables,
/// unary minus, + - * / %, comparisons (< <= > >= == !=) and parentheses.
/// Runtime errors (division by zero, unknown variable, empty stdin) exit with status 1.
/// The timeout is enforced as a step budget of steps_per_ms per millisecond.
class ToyInterpreterRunner final : public CodeRunner {
 public:
  explicit ToyInterpreterRunner(long steps_per_ms = 10'000) : steps_per_ms_(steps_per_ms) {}
  bool check_syntax(std::string_view program) const override;
  RunOutcome run(std::string_view program, std::string_view stdin_text,
                 std::chrono::milliseconds timeout) const override;

 private:
  long steps_per_ms_;
};

/// Runs an external interpreter: the program is written to a temporary file and
/// `command... <file>` is executed with the test input on stdin.
class ProcessRunner final : public CodeRunner {
 public:
  ProcessRunner(std::vector<std::string> command, std::vector<std::string> syntax_command);
  bool check_syntax(std::string_view program) const override;
  RunOutcome run(std::string_view program, std::string_view stdin_text,
                 std::chrono::milliseconds timeout) const override;

 private:
  std::vector<std::string> command_;
  std::vector<std::string> syntax_command_;
};

}  // namespace rtrain
