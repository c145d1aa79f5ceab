// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/code_runner.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "rtrain/common.hpp"

namespace rtrain {

namespace {

// ---------------------------------------------------------------------------
// toy language

struct SyntaxError {
  std::string what;
};
struct RuntimeError {};
struct StepLimit {};

struct Lexeme {
  enum Kind { kIdent, kNumber, kOp, kEol, kEnd } kind;
  std::string text;
};

std::vector<Lexeme> lex(std::string_view src) {
  std::vector<Lexeme> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (c == '\n' || c == ';') {
      out.push_back({Lexeme::kEol, ""});
      ++i;
    } else if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      if (j - i > 18) throw SyntaxError{"integer literal too long"};
      out.push_back({Lexeme::kNumber, std::string(src.substr(i, j - i))});
      i = j;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      out.push_back({Lexeme::kIdent, std::string(src.substr(i, j - i))});
      i = j;
    } else {
      static const char* two[] = {"<=", ">=", "==", "!="};
      bool matched = false;
      for (const char* op : two) {
        if (src.substr(i, 2) == op) {
          out.push_back({Lexeme::kOp, op});
          i += 2;
          matched = true;
          break;
        }
      }
      if (matched) continue;
      if (std::strchr("+-*/%()<>=", c) == nullptr) {
        throw SyntaxError{std::string("unexpected character '") + c + "'"};
      }
      out.push_back({Lexeme::kOp, std::string(1, c)});
      ++i;
    }
  }
  out.push_back({Lexeme::kEol, ""});
  out.push_back({Lexeme::kEnd, ""});
  return out;
}

struct Expr {
  enum Kind { kNum, kVar, kNeg, kBin } kind = kNum;
  std::int64_t value = 0;
  std::string name;  // variable or operator
  std::unique_ptr<Expr> lhs, rhs;
};

struct Stmt {
  enum Kind { kRead, kLet, kPrint, kWhile } kind = kPrint;
  std::string name;
  std::unique_ptr<Expr> expr;
  std::vector<Stmt> body;
};

bool is_keyword(const std::string& s) {
  return s == "read" || s == "let" || s == "print" || s == "while" || s == "end";
}

class Parser {
 public:
  explicit Parser(std::vector<Lexeme> lx) : lx_(std::move(lx)) {}

  std::vector<Stmt> program() {
    auto body = block(false);
    if (peek().kind != Lexeme::kEnd) throw SyntaxError{"unexpected 'end'"};
    return body;
  }

 private:
  const Lexeme& peek() const { return lx_[pos_]; }
  Lexeme next() { return lx_[pos_++]; }
  bool at_op(const char* op) const { return peek().kind == Lexeme::kOp && peek().text == op; }
  void expect_op(const char* op) {
    if (!at_op(op)) throw SyntaxError{std::string("expected '") + op + "'"};
    ++pos_;
  }
  void expect_eol() {
    if (peek().kind != Lexeme::kEol) throw SyntaxError{"expected end of statement"};
    ++pos_;
  }
  std::string ident() {
    if (peek().kind != Lexeme::kIdent || is_keyword(peek().text)) throw SyntaxError{"expected identifier"};
    return next().text;
  }

  std::vector<Stmt> block(bool in_loop) {
    std::vector<Stmt> body;
    for (;;) {
      while (peek().kind == Lexeme::kEol) ++pos_;
      if (peek().kind == Lexeme::kEnd) {
        if (in_loop) throw SyntaxError{"missing 'end'"};
        return body;
      }
      if (peek().kind == Lexeme::kIdent && peek().text == "end") {
        if (!in_loop) throw SyntaxError{"'end' without 'while'"};
        ++pos_;
        expect_eol();
        return body;
      }
      body.push_back(statement());
    }
  }

  Stmt statement() {
    if (peek().kind != Lexeme::kIdent) throw SyntaxError{"expected statement"};
    const std::string kw = next().text;
    Stmt s;
    if (kw == "read") {
      s.kind = Stmt::kRead;
      s.name = ident();
    } else if (kw == "let") {
      s.kind = Stmt::kLet;
      s.name = ident();
      expect_op("=");
      s.expr = expression();
    } else if (kw == "print") {
      s.kind = Stmt::kPrint;
      s.expr = expression();
    } else if (kw == "while") {
      s.kind = Stmt::kWhile;
      s.expr = expression();
      expect_eol();
      s.body = block(true);
      return s;
    } else {
      throw SyntaxError{"unknown statement '" + kw + "'"};
    }
    expect_eol();
    return s;
  }

  std::unique_ptr<Expr> binary(std::unique_ptr<Expr> l, std::string op, std::unique_ptr<Expr> r) {
    auto e = std::make_unique<Expr>();
    e->kind = Expr::kBin;
    e->name = std::move(op);
    e->lhs = std::move(l);
    e->rhs = std::move(r);
    return e;
  }

  std::unique_ptr<Expr> expression() {
    auto lhs = additive();
    for (const char* op : {"<=", ">=", "==", "!=", "<", ">"}) {
      if (at_op(op)) {
        ++pos_;
        return binary(std::move(lhs), op, additive());
      }
    }
    return lhs;
  }

  std::unique_ptr<Expr> additive() {
    auto lhs = term();
    while (at_op("+") || at_op("-")) {
      const std::string op = next().text;
      lhs = binary(std::move(lhs), op, term());
    }
    return lhs;
  }

  std::unique_ptr<Expr> term() {
    auto lhs = unary();
    while (at_op("*") || at_op("/") || at_op("%")) {
      const std::string op = next().text;
      lhs = binary(std::move(lhs), op, unary());
    }
    return lhs;
  }

  std::unique_ptr<Expr> unary() {
    if (at_op("-")) {
      ++pos_;
      auto e = std::make_unique<Expr>();
      e->kind = Expr::kNeg;
      e->lhs = unary();
      return e;
    }
    return primary();
  }

  std::unique_ptr<Expr> primary() {
    auto e = std::make_unique<Expr>();
    if (peek().kind == Lexeme::kNumber) {
      e->kind = Expr::kNum;
      e->value = std::stoll(next().text);
    } else if (peek().kind == Lexeme::kIdent && !is_keyword(peek().text)) {
      e->kind = Expr::kVar;
      e->name = next().text;
    } else if (at_op("(")) {
      ++pos_;
      e = expression();
      expect_op(")");
    } else {
      throw SyntaxError{"expected expression"};
    }
    return e;
  }

  std::vector<Lexeme> lx_;
  std::size_t pos_ = 0;
};

std::vector<Stmt> parse_program(std::string_view src) { return Parser(lex(src)).program(); }

class Machine {
 public:
  Machine(std::string_view input, long budget) : budget_(budget) {
    std::istringstream in{std::string(input)};
    std::string tok;
    while (in >> tok) input_.push_back(tok);
  }

  void exec(const std::vector<Stmt>& body) {
    for (const auto& s : body) exec(s);
  }

  std::string output;

 private:
  void step() {
    if (--budget_ < 0) throw StepLimit{};
  }

  void exec(const Stmt& s) {
    step();
    switch (s.kind) {
      case Stmt::kRead: {
        if (next_input_ >= input_.size()) throw RuntimeError{};
        char* end = nullptr;
        const std::string& tok = input_[next_input_++];
        errno = 0;
        const long long v = std::strtoll(tok.c_str(), &end, 10);
        if (errno != 0 || end == tok.c_str() || *end != '\0') throw RuntimeError{};
        vars_[s.name] = v;
        break;
      }
      case Stmt::kLet: vars_[s.name] = eval(*s.expr); break;
      case Stmt::kPrint: output += std::to_string(eval(*s.expr)) + "\n"; break;
      case Stmt::kWhile:
        while (eval(*s.expr) != 0) {
          step();
          exec(s.body);
        }
        break;
    }
  }

  std::int64_t eval(const Expr& e) {
    step();
    switch (e.kind) {
      case Expr::kNum: return e.value;
      case Expr::kVar: {
        auto it = vars_.find(e.name);
        if (it == vars_.end()) throw RuntimeError{};
        return it->second;
      }
      case Expr::kNeg: return static_cast<std::int64_t>(0ULL - static_cast<std::uint64_t>(eval(*e.lhs)));
      case Expr::kBin: break;
    }
    const std::int64_t a = eval(*e.lhs);
    const std::int64_t b = eval(*e.rhs);
    const auto ua = static_cast<std::uint64_t>(a);
    const auto ub = static_cast<std::uint64_t>(b);
    const std::string& op = e.name;
    if (op == "+") return static_cast<std::int64_t>(ua + ub);
    if (op == "-") return static_cast<std::int64_t>(ua - ub);
    if (op == "*") return static_cast<std::int64_t>(ua * ub);
    if (op == "/" || op == "%") {
      if (b == 0 || (a == INT64_MIN && b == -1)) throw RuntimeError{};
      return op == "/" ? a / b : a % b;
    }
    if (op == "<") return a < b;
    if (op == "<=") return a <= b;
    if (op == ">") return a > b;
    if (op == ">=") return a >= b;
    if (op == "==") return a == b;
    return a != b;
  }

  long budget_;
  std::vector<std::string> input_;
  std::size_t next_input_ = 0;
  std::map<std::string, std::int64_t> vars_;
};

// ---------------------------------------------------------------------------
// external processes

class TempFile {
 public:
  explicit TempFile(std::string_view contents) {
    std::string templ = (std::filesystem::temp_directory_path() / "rtrain-prog-XXXXXX").string();
    const int fd = ::mkstemp(templ.data());
    if (fd < 0) throw Error("ProcessRunner: cannot create temporary file");
    path_ = templ;
    std::size_t off = 0;
    while (off < contents.size()) {
      const ssize_t n = ::write(fd, contents.data() + off, contents.size() - off);
      if (n <= 0) {
        ::close(fd);
        throw Error("ProcessRunner: cannot write temporary file");
      }
      off += static_cast<std::size_t>(n);
    }
    ::close(fd);
  }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

RunOutcome spawn(const std::vector<std::string>& argv_in, std::string_view stdin_text,
                 std::chrono::milliseconds timeout) {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw Error("ProcessRunner: pipe failed");
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error("ProcessRunner: pipe failed");
  }
  std::vector<char*> argv;
  for (const auto& a : argv_in) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw Error("ProcessRunner: fork failed");
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    const int devnull = ::open("/dev/null", O_WRONLY);
    if (devnull >= 0) ::dup2(devnull, STDERR_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);

  std::size_t off = 0;
  while (off < stdin_text.size()) {
    const ssize_t n = ::write(in_pipe[1], stdin_text.data() + off, stdin_text.size() - off);
    if (n <= 0) break;  // child stopped reading
    off += static_cast<std::size_t>(n);
  }
  ::close(in_pipe[1]);

  RunOutcome out;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      out.timed_out = true;
      break;
    }
    pollfd pfd{out_pipe[0], POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) {
      out.timed_out = true;
      break;
    }
    const ssize_t n = ::read(out_pipe[0], buf, sizeof buf);
    if (n <= 0) break;
    out.stdout_text.append(buf, static_cast<std::size_t>(n));
  }
  ::close(out_pipe[0]);
  if (out.timed_out) ::kill(pid, SIGKILL);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (out.timed_out) {
    out.exit_status = -1;
    return out;
  }
  if (WIFSIGNALED(status)) {
    throw Error("ProcessRunner: interpreter killed by signal " + std::to_string(WTERMSIG(status)));
  }
  out.exit_status = WEXITSTATUS(status);
  if (out.exit_status == 127) throw Error("ProcessRunner: cannot execute '" + argv_in.front() + "'");
  return out;
}

}  // namespace

bool ToyInterpreterRunner::check_syntax(std::string_view program) const {
  try {
    parse_program(program);
    return true;
  } catch (const SyntaxError&) {
    return false;
  }
}

RunOutcome ToyInterpreterRunner::run(std::string_view program, std::string_view stdin_text,
                                     std::chrono::milliseconds timeout) const {
  std::vector<Stmt> body;
  try {
    body = parse_program(program);
  } catch (const SyntaxError&) {
    return {"", 2, false};
  }
  Machine m(stdin_text, static_cast<long>(timeout.count()) * steps_per_ms_);
  try {
    m.exec(body);
  } catch (const RuntimeError&) {
    return {m.output, 1, false};
  } catch (const StepLimit&) {
    return {m.output, -1, true};
  }
  return {m.output, 0, false};
}

ProcessRunner::ProcessRunner(std::vector<std::string> command, std::vector<std::string> syntax_command)
    : command_(std::move(command)), syntax_command_(std::move(syntax_command)) {
  if (command_.empty()) throw Error("ProcessRunner: empty command");
  // Writes to a child that exited early must surface as EPIPE, not terminate us.
  ::signal(SIGPIPE, SIG_IGN);
}

bool ProcessRunner::check_syntax(std::string_view program) const {
  if (syntax_command_.empty()) return true;
  TempFile file(program);
  auto argv = syntax_command_;
  argv.push_back(file.path());
  const RunOutcome r = spawn(argv, "", std::chrono::milliseconds(10'000));
  return !r.timed_out && r.exit_status == 0;
}

RunOutcome ProcessRunner::run(std::string_view program, std::string_view stdin_text,
                              std::chrono::milliseconds timeout) const {
  TempFile file(program);
  auto argv = command_;
  argv.push_back(file.path());
  return spawn(argv, stdin_text, timeout);
}

}  // namespace rtrain
