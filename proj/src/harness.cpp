// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "rtrain/code_runner.hpp"

namespace rtrain {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<TokenId> with_eos(const Vocab& vocab, std::string_view text) {
  auto t = vocab.encode(text);
  t.push_back(vocab.eos());
  return t;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// -- toy world --

ToyWorld::ToyWorld(const ExperimentConfig& cfg) : vocab_(Vocab::toy()), max_positions_(cfg.max_positions) {
  if (cfg.dataset.empty()) {
    pool_ = make_toy_taskset(cfg.pool_size, cfg.seed);
  } else {
    pool_ = load_dataset(cfg.dataset);
    for (auto& s : pool_) {
      const ToyQuestion q = parse_toy_prompt(s.prompt);
      if (!s.reference_answer) s.reference_answer = std::to_string(q.answer());
    }
  }
  if (pool_.empty()) throw Error("ToyWorld: empty prompt pool");
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    if (!slots_.emplace(pool_[i].id, i).second) throw Error("ToyWorld: duplicate sample id '" + pool_[i].id + "'");
  }
}

std::size_t ToyWorld::slot(const DataSample& s) const {
  const auto it = slots_.find(s.id);
  if (it == slots_.end()) throw Error("ToyWorld: unknown sample id '" + s.id + "'");
  return it->second;
}

TabularPolicy ToyWorld::blank_policy() const { return TabularPolicy(pool_.size(), max_positions_, vocab_.size()); }

bool ToyWorld::verify(const DataSample& s, std::span<const TokenId> tokens) const {
  static const MockLlmVerifier judge;
  const std::string text = vocab_.decode(tokens);
  if (validate_format(text, ExpectedMode::slow) != 0.0) return false;
  try {
    return verify_math(text, s.reference_answer.value_or(""), &judge);
  } catch (const UnverifiableError&) {
    return false;
  }
}

VerifyFn ToyWorld::verifier() const {
  return [this](const DataSample& s, std::span<const TokenId> t) { return verify(s, t); };
}

DetectorConfig ToyWorld::detector(const DetectorConfig& base) const {
  DetectorConfig d = base;
  d.control_prompt = {vocab_.id("<repair>")};
  return d;
}

std::string toy_trace(const ToyQuestion& q, int verbosity, std::optional<int> answer, bool close_think) {
  const int sum = q.a + q.b;
  const int r = answer.value_or(q.answer());
  std::string s = "<think> " + std::to_string(q.a) + " + " + std::to_string(q.b) + " = " + std::to_string(sum);
  for (int i = 0; i < verbosity; ++i) s += " = " + std::to_string(sum);
  s += " % " + std::to_string(q.modulus) + " = " + std::to_string(r);
  if (close_think) s += " </think>";
  s += " " + std::to_string(r);
  return s;
}

std::optional<std::string> teacher_solution(const ToyWorld& world, const DataSample& s, const TeacherConfig& cfg,
                                            std::uint64_t seed) {
  if (cfg.candidates < 1) throw Error("teacher: candidates must be >= 1");
  const ToyQuestion q = parse_toy_prompt(s.prompt);
  Rng rng(seed);
  std::optional<std::string> best;
  std::size_t best_len = 0;
  for (int c = 0; c < cfg.candidates; ++c) {
    std::optional<int> answer;
    if (uniform01(rng) < cfg.wrong_rate) {
      answer = (q.answer() + 1 + static_cast<int>(uniform_index(rng, q.modulus - 1))) % q.modulus;
    }
    const int verbosity = uniform01(rng) < cfg.verbose_rate ? 1 : 0;
    std::string text = toy_trace(q, verbosity, answer);
    const auto tokens = with_eos(world.vocab(), text);
    if (!world.verify(s, tokens)) continue;
    if (!best || tokens.size() < best_len) {
      best = std::move(text);
      best_len = tokens.size();
    }
  }
  return best;
}

std::vector<DataSample> generate_solutions(const ToyWorld& world, const TeacherConfig& cfg, std::uint64_t seed) {
  std::vector<DataSample> out;
  for (std::size_t i = 0; i < world.pool().size(); ++i) {
    DataSample s = world.pool()[i];
    if (auto r = teacher_solution(world, s, cfg, derive_seed(seed, "teacher", i))) {
      s.response = std::move(*r);
      out.push_back(std::move(s));
    }
  }
  return out;
}

TabularPolicy pretrain_base(const ToyWorld& world, const PretrainConfig& cfg, std::uint64_t seed) {
  if (cfg.traces_per_prompt < 1) throw Error("pretrain: traces_per_prompt must be >= 1");
  if (!(cfg.min_corruption >= 0.0 && cfg.min_corruption <= cfg.max_corruption && cfg.max_corruption <= 1.0)) {
    throw Error("pretrain: need 0 <= min_corruption <= max_corruption <= 1");
  }
  if (!(cfg.smoothing > 0.0)) throw Error("pretrain: smoothing must be positive");
  TabularPolicy policy = world.blank_policy();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(policy.params().dim());
  const int v = policy.vocab_size();
  for (std::size_t p = 0; p < world.pool().size(); ++p) {
    const ToyQuestion q = parse_toy_prompt(world.pool()[p].prompt);
    Rng rng(derive_seed(seed, "pretrain", p));
    const double rate = cfg.min_corruption + (cfg.max_corruption - cfg.min_corruption) * uniform01(rng);
    const bool drop_close = uniform01(rng) < 0.5;
    const int wrong = (q.answer() + 1 + static_cast<int>(uniform_index(rng, q.modulus - 1))) % q.modulus;
    const int bad = static_cast<int>(std::lround(rate * cfg.traces_per_prompt));
    for (int r = 0; r < cfg.traces_per_prompt; ++r) {
      std::string text;
      if (r >= bad) {
        text = toy_trace(q);
      } else if (drop_close) {
        text = toy_trace(q, 0, std::nullopt, false);
      } else {
        text = toy_trace(q, 0, wrong);
      }
      const auto tokens = with_eos(world.vocab(), text);
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        const std::size_t st = policy.state_for({p, std::span<const TokenId>(tokens.data(), t)});
        counts[static_cast<Eigen::Index>(st * v + tokens[t])] += 1.0;
      }
    }
  }
  policy.set_params(ParamVector((counts.array() + cfg.smoothing).log().matrix()));
  return policy;
}

std::vector<ParamVector> sft_train(TabularPolicy& policy, const std::vector<SftExample>& data, const SftConfig& cfg,
                                   int num_checkpoints, std::uint64_t seed) {
  if (data.empty()) throw Error("sft: no training data");
  if (cfg.epochs < 1 || cfg.batch == 0) throw Error("sft: epochs and batch must be positive");
  if (num_checkpoints < 1) throw Error("sft: num_checkpoints must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<ParamVector> checkpoints;
  const std::size_t n = data.size();
  const std::size_t total_steps = static_cast<std::size_t>(cfg.epochs) * ((n + cfg.batch - 1) / cfg.batch);
  const std::size_t first_kept = total_steps - std::min(total_steps, static_cast<std::size_t>(num_checkpoints));
  std::size_t step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng(derive_seed(seed, "sft", static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t end = std::min(n, start + cfg.batch);
      SparseGrad grad;
      for (std::size_t k = start; k < end; ++k) {
        const SftExample& ex = data[order[k]];
        for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
          const std::size_t st = policy.state_for({ex.slot, std::span<const TokenId>(ex.tokens.data(), t)});
          accumulate(grad, policy.grad_token_logprob(st, ex.tokens[t]));
        }
      }
      policy.apply(grad, cfg.learning_rate);
      if (step++ >= first_kept) checkpoints.push_back(policy.params());
    }
  }
  policy.params().check_finite();
  return checkpoints;
}

// -- evaluation --

std::size_t runs_needed(std::size_t benchmark_size, std::size_t min_effective) {
  if (benchmark_size == 0) throw Error("evaluate: benchmark is empty");
  return std::max<std::size_t>(1, (min_effective + benchmark_size - 1) / benchmark_size);
}

EvalResult evaluate(const SequenceModel& policy, const ToyWorld& world, const std::vector<DataSample>& benchmark,
                    const EvalConfig& cfg, std::uint64_t seed) {
  EvalResult r;
  r.benchmark_size = benchmark.size();
  r.runs = runs_needed(benchmark.size(), cfg.min_effective);
  const std::size_t m = benchmark.size();
  std::size_t correct = 0;
  for (std::size_t run = 0; run < r.runs; ++run) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto resp = sample_response(policy, world.slot(benchmark[i]), cfg.generation, world.vocab().eos(),
                                        derive_seed(seed, "eval", run * m + i));
      correct += world.verify(benchmark[i], resp.tokens) ? 1 : 0;
    }
  }
  const double total = static_cast<double>(r.runs * m);
  const double p = static_cast<double>(correct) / total;
  r.accuracy = 100.0 * p;
  r.stderr_pct = 100.0 * std::sqrt(p * (1.0 - p) / total);
  return r;
}

// -- repetition --

RepetitionCounts count_repetition(const std::vector<RepairResult>& results) {
  RepetitionCounts c;
  c.sequences = results.size();
  for (const auto& r : results) {
    c.flagged += r.events.empty() ? 0 : 1;
    c.injected += static_cast<std::size_t>(std::count_if(r.events.begin(), r.events.end(), [](const auto& e) {
      return e.action == DetectionAction::prompt_injected;
    }));
    c.truncated += r.truncated ? 1 : 0;
  }
  return c;
}

RepetitionAblation repetition_ablation(const SequenceModel& model, std::size_t num_prompts, std::size_t sequences,
                                       const GenerationConfig& gen, const DetectorConfig& det, TokenId eos,
                                       std::uint64_t seed) {
  if (num_prompts == 0) throw Error("repetition_ablation: num_prompts must be >= 1");
  std::vector<RepairResult> base, repair;
  for (std::size_t i = 0; i < sequences; ++i) {
    const std::uint64_t s = derive_seed(seed, "repetition", i);
    base.push_back(self_repair_generate(model, i % num_prompts, gen, det, eos, s, false));
    repair.push_back(self_repair_generate(model, i % num_prompts, gen, det, eos, s, true));
  }
  RepetitionAblation out;
  out.baseline = count_repetition(base);
  out.repair = count_repetition(repair);
  for (const auto& r : repair) out.events.insert(out.events.end(), r.events.begin(), r.events.end());
  return out;
}

// -- phases --

Mars make_toy_mars(const MarsConfig& cfg) {
  return Mars(cfg, std::make_shared<ToyInterpreterRunner>(), std::make_shared<MockLlmVerifier>(),
              std::make_shared<MockPreferenceModel>());
}

DistillResult run_distillation(const ExperimentConfig& cfg, const ToyWorld& world, const TabularPolicy& base) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  DistillResult out{base, {}, {}, {}};
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "validation");
  const std::vector<DataSample> solved = generate_solutions(world, cfg.teacher, derive_seed(cfg.seed, "teacher"));
  const auto slot = [&world](const DataSample& s) { return world.slot(s); };
  const GenerationConfig scoring{cfg.selection.temperature, 1.0, kInf, world.max_positions()};

  out.accuracy.push_back(evaluate(out.policy, world, world.pool(), cfg.eval, eval_seed));
  auto record = [&](std::size_t t, std::size_t selected, double mean_c) {
    const EvalResult& e = out.accuracy.back();
    out.metrics.push_back({"distill",
                           t,
                           {{"selected", static_cast<double>(selected)},
                            {"mean_complexity", mean_c},
                            {"accuracy", e.accuracy},
                            {"stderr", e.stderr_pct},
                            {"runs", static_cast<double>(e.runs)}},
                           seconds_since(t0)});
  };
  record(0, 0, 0.0);

  for (int t = 1; t <= cfg.distill.iterations; ++t) {
    SelectionConfig sc = cfg.selection;
    sc.seed = derive_seed(cfg.seed, "selection", static_cast<std::uint64_t>(t));
    const std::string_view prefix = t == 1 ? std::string_view(cfg.distill.few_shot_prefix) : std::string_view();
    const SelectionResult sel =
        select_samples(solved, model_rollout(out.policy, slot, scoring, world.vocab().eos()), world.verifier(), sc,
                       prefix);
    if (sel.kept.empty()) {
      throw Error("distill: selection is empty at iteration " + std::to_string(t) +
                  "; widen selection.sigma or move selection.mu");
    }
    std::vector<SftExample> data;
    for (const auto& s : sel.kept) data.push_back({world.slot(s), with_eos(world.vocab(), *s.response)});
    TabularPolicy student = out.policy;
    const auto cks = sft_train(student, data, cfg.distill.sft, cfg.merge.num_checkpoints,
                               derive_seed(cfg.seed, "sft", static_cast<std::uint64_t>(t)));
    if (cfg.distill.merge) {
      out.policy.set_params(merge_iteration(out.policy.params(), CheckpointSet(cks, t), cfg.merge.lambda));
    } else {
      out.policy.set_params(cks.back());
    }
    out.selected.push_back(sel.kept.size());
    double mean_c = 0.0;
    for (const auto& c : sel.scores) mean_c += c.value;
    mean_c /= static_cast<double>(sel.scores.size());
    out.accuracy.push_back(evaluate(out.policy, world, world.pool(), cfg.eval, eval_seed));
    record(static_cast<std::size_t>(t), sel.kept.size(), mean_c);
    const double gain = out.accuracy.back().accuracy - out.accuracy[out.accuracy.size() - 2].accuracy;
    if (cfg.distill.stop_on_marginal && gain < cfg.distill.min_improvement) break;
  }
  return out;
}

RlResult run_rl(const ExperimentConfig& cfg, const ToyWorld& world, const TabularPolicy& start) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RlResult out{start, {}, {}, {}};
  const Mars mars = make_toy_mars(cfg.mars);
  const auto slot = [&world](const DataSample& s) { return world.slot(s); };
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "validation");

  SelectionConfig sc = cfg.selection;
  sc.seed = derive_seed(cfg.seed, "curriculum");
  const GenerationConfig scoring{1.0, 1.0, kInf, world.max_positions()};
  const RolloutFn rollout = model_rollout(start, slot, scoring, world.vocab().eos());
  std::vector<double> scores;
  for (const auto& s : world.pool()) scores.push_back(complexity_score(s, rollout, world.verifier(), sc).value);
  const CurriculumBuckets buckets = bucket_by_complexity(world.pool(), scores, cfg.rl.bucket_low, cfg.rl.bucket_high);
  out.bucket_sizes = {buckets.easy.size(), buckets.medium.size(), buckets.hard.size()};
  std::array<int, 3> ratio = cfg.rl.ratio;
  for (std::size_t b = 0; b < 3; ++b) {
    if (out.bucket_sizes[b] == 0) ratio[b] = 0;
  }
  if (ratio[0] + ratio[1] + ratio[2] == 0) throw Error("rl: every bucket with a non-zero ratio is empty");

  RlStepConfig step = cfg.rl.step;
  step.detector = world.detector(cfg.detector);

  auto eval_record = [&](std::size_t s) {
    const EvalResult e = evaluate(out.policy, world, world.pool(), cfg.eval, eval_seed);
    out.metrics.push_back({"rl_eval",
                           s,
                           {{"accuracy", e.accuracy}, {"stderr", e.stderr_pct}, {"runs", static_cast<double>(e.runs)}},
                           seconds_since(t0)});
  };
  if (cfg.rl.steps > 0) eval_record(0);

  for (std::size_t s = 0; s < cfg.rl.steps; ++s) {
    const MixedBatch batch =
        mix_curriculum(buckets, cfg.rl.prompts_per_step, ratio, derive_seed(cfg.seed, "curriculum_mix", s));
    std::vector<RlPrompt> prompts;
    prompts.reserve(batch.samples.size());
    for (const auto& x : batch.samples) prompts.push_back({x, world.slot(x)});
    StepMetrics m = rl_step(out.policy, start, prompts, step, mars, world.vocab(), derive_seed(cfg.seed, "rollout", s));
    m.step = s + 1;
    out.steps.push_back(m);
    out.metrics.push_back({"rl",
                           m.step,
                           {{"mean_reward", m.mean_reward},
                            {"masked_fraction", m.masked_fraction},
                            {"mean_kl", m.mean_kl},
                            {"mean_abs_adv", m.mean_abs_adv},
                            {"repair_events", static_cast<double>(m.repair_events)},
                            {"n_easy", static_cast<double>(batch.counts[0])},
                            {"n_medium", static_cast<double>(batch.counts[1])},
                            {"n_hard", static_cast<double>(batch.counts[2])}},
                           seconds_since(t0)});
    const bool due = cfg.rl.eval_every > 0 && m.step % cfg.rl.eval_every == 0;
    if (due || m.step == cfg.rl.steps) eval_record(m.step);
  }
  return out;
}

// -- report --

namespace {

struct PhaseTable {
  std::string phase;
  std::vector<std::string> columns;
  std::vector<const MetricsRecord*> rows;
  double wall_seconds = 0.0;
};

std::vector<PhaseTable> group_phases(const MetricsLog& metrics) {
  std::vector<PhaseTable> out;
  for (const auto& r : metrics) {
    if (r.phase.empty()) throw Error("emit_report: record without a phase");
    auto it = std::find_if(out.begin(), out.end(), [&](const PhaseTable& p) { return p.phase == r.phase; });
    if (it == out.end()) {
      out.push_back({r.phase, {}, {}, 0.0});
      it = out.end() - 1;
    }
    if (!it->rows.empty() && r.step < it->rows.back()->step) {
      throw Error("emit_report: steps go backwards in phase '" + r.phase + "'");
    }
    for (const auto& [k, v] : r.values) {
      if (std::find(it->columns.begin(), it->columns.end(), k) == it->columns.end()) it->columns.push_back(k);
    }
    it->rows.push_back(&r);
    it->wall_seconds = std::max(it->wall_seconds, r.wall_seconds);
  }
  return out;
}

std::optional<double> lookup(const MetricsRecord& r, const std::string& key) {
  for (const auto& [k, v] : r.values) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void write_counts_row(std::ostream& out, const char* name, const RepetitionCounts& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %10zu %10zu %10zu %10zu\n", name, c.sequences, c.flagged, c.injected,
                c.truncated);
  out << buf;
}

}  // namespace

void emit_report(const MetricsLog& metrics, const std::filesystem::path& out_dir,
                 const std::optional<RepetitionAblation>& repetition) {
  if (metrics.empty() && !repetition) throw Error("emit_report: nothing to report");
  std::filesystem::create_directories(out_dir);
  const auto phases = group_phases(metrics);
  for (const auto& p : phases) {
    const auto path = out_dir / (p.phase + "_metrics.csv");
    std::ofstream f(path);
    if (!f) throw Error("emit_report: cannot write " + path.string());
    f << "step";
    for (const auto& c : p.columns) f << ',' << c;
    f << '\n';
    for (const MetricsRecord* r : p.rows) {
      f << r->step;
      for (const auto& c : p.columns) {
        f << ',';
        if (auto v = lookup(*r, c)) f << fmt_g(*v);
      }
      f << '\n';
    }
    if (!f) throw Error("emit_report: write failed for " + path.string());
  }

  std::ofstream s(out_dir / "summary.txt");
  if (!s) throw Error("emit_report: cannot write summary.txt");
  for (const auto& p : phases) {
    char head[128];
    std::snprintf(head, sizeof head, "== %s (%zu records, %.2f s)\n", p.phase.c_str(), p.rows.size(), p.wall_seconds);
    s << head;
    // long phases show every tenth row plus the last
    const std::size_t stride = p.rows.size() > 40 ? p.rows.size() / 10 : 1;
    char cell[64];
    std::snprintf(cell, sizeof cell, "%8s", "step");
    s << cell;
    for (const auto& c : p.columns) {
      std::snprintf(cell, sizeof cell, " %15s", c.c_str());
      s << cell;
    }
    s << '\n';
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
      if (i % stride != 0 && i + 1 != p.rows.size()) continue;
      std::snprintf(cell, sizeof cell, "%8zu", p.rows[i]->step);
      s << cell;
      for (const auto& c : p.columns) {
        const auto v = lookup(*p.rows[i], c);
        if (v) {
          std::snprintf(cell, sizeof cell, " %15.4f", *v);
        } else {
          std::snprintf(cell, sizeof cell, " %15s", "-");
        }
        s << cell;
      }
      s << '\n';
    }
    s << '\n';
  }
  if (repetition) {
    s << "== repetition ablation\n";
    char head[160];
    std::snprintf(head, sizeof head, "%-12s %10s %10s %10s %10s\n", "run", "sequences", "flagged", "injected",
                  "truncated");
    s << head;
    write_counts_row(s, "baseline", repetition->baseline);
    write_counts_row(s, "self-repair", repetition->repair);
  }
  if (!s) throw Error("emit_report: write failed for summary.txt");
}

MetricsLog read_metrics_csv(const std::filesystem::path& path, const std::string& phase) {
  std::ifstream f(path);
  if (!f) throw Error("read_metrics_csv: cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  };
  std::string line;
  if (!std::getline(f, line)) throw Error("read_metrics_csv: empty file " + path.string());
  const auto header = split(line);
  if (header.empty() || header[0] != "step") throw Error("read_metrics_csv: missing step column");
  MetricsLog out;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw Error("read_metrics_csv: line " + std::to_string(line_no) + " has the wrong number of cells");
    }
    MetricsRecord r;
    r.phase = phase;
    r.step = std::stoull(cells[0]);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (!cells[i].empty()) r.values.emplace_back(header[i], std::stod(cells[i]));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace rtrain
