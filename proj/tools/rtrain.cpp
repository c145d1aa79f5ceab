// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Every subcommand takes --config, --seed, --out and any
// number of --set section.key=value overrides, applied after the file.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "rtrain/code_runner.hpp"
#include "rtrain/harness.hpp"

namespace {

using namespace rtrain;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> overrides;
};

// dedup and zipselect take --out as the output file instead of a directory
void add_common(CLI::App* app, Common& c, bool out_dir = true) {
  app->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "top-level seed (overrides the config)");
  if (out_dir) app->add_option("--out", c.out, "output directory");
  app->add_option("--set", c.overrides, "section.key=value override")->take_all();
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error("--set expects section.key=value, got '" + o + "'");
    set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

TabularPolicy start_policy(const ExperimentConfig& cfg, const ToyWorld& world, const std::string& checkpoint) {
  if (checkpoint.empty()) return pretrain_base(world, cfg.pretrain, derive_seed(cfg.seed, "pretrain"));
  const TabularPolicy blank = world.blank_policy();
  return TabularPolicy(blank.num_prompts(), blank.max_positions(), blank.vocab_size(), load_checkpoint(checkpoint));
}

void print_eval(const char* label, const EvalResult& e) {
  std::printf("%s: %.2f%% +/- %.2f (N=%zu runs over M=%zu)\n", label, e.accuracy, e.stderr_pct, e.runs,
              e.benchmark_size);
}

int cmd_distill(const Common& c, const std::string& init) {
  const ExperimentConfig cfg = resolve(c);
  const ToyWorld world(cfg);
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text(out / "config.ini", config_to_ini_text(cfg));
  const DistillResult r = run_distillation(cfg, world, start_policy(cfg, world, init));
  save_checkpoint(r.policy.params(), out / "distill.ckpt");
  emit_report(r.metrics, out);
  for (std::size_t t = 0; t < r.accuracy.size(); ++t) {
    std::printf("iteration %zu: %.2f%% +/- %.2f\n", t, r.accuracy[t].accuracy, r.accuracy[t].stderr_pct);
  }
  return 0;
}

int cmd_rl(const Common& c, const std::string& init) {
  const ExperimentConfig cfg = resolve(c);
  const ToyWorld world(cfg);
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text(out / "config.ini", config_to_ini_text(cfg));
  const RlResult r = run_rl(cfg, world, start_policy(cfg, world, init));
  save_checkpoint(r.policy.params(), out / "rl.ckpt");
  if (!r.metrics.empty()) emit_report(r.metrics, out);
  std::printf("buckets easy=%zu medium=%zu hard=%zu, %zu steps\n", r.bucket_sizes[0], r.bucket_sizes[1],
              r.bucket_sizes[2], r.steps.size());
  if (!r.steps.empty()) {
    std::printf("mean reward: first step %.4f, last step %.4f\n", r.steps.front().mean_reward,
                r.steps.back().mean_reward);
  }
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(c);
  const ToyWorld world(cfg);
  const TabularPolicy policy = start_policy(cfg, world, checkpoint);
  print_eval("accuracy", evaluate(policy, world, world.pool(), cfg.eval, derive_seed(cfg.seed, "validation")));
  return 0;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

int cmd_rewards(const Common& c, const std::string& in, const std::string& mode, const std::string& runner_cmd,
                const std::string& syntax_cmd) {
  const ExperimentConfig cfg = resolve(c);
  std::shared_ptr<const CodeRunner> runner;
  if (runner_cmd.empty()) {
    runner = std::make_shared<ToyInterpreterRunner>();
  } else {
    runner = std::make_shared<ProcessRunner>(split_words(runner_cmd), split_words(syntax_cmd));
  }
  const Mars mars(cfg.mars, runner, std::make_shared<MockLlmVerifier>(), std::make_shared<MockPreferenceModel>());
  const ExpectedMode expected = parse_expected_mode(mode);
  const auto samples = load_dataset(in);
  // responses to the same prompt form one preference group
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> by_prompt;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].response) throw Error("rewards: sample '" + samples[i].id + "' has no response");
    const auto [it, fresh] = by_prompt.emplace(samples[i].prompt, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ofstream audit(out / "rewards.jsonl");
  std::vector<RewardSignal> signals(samples.size());
  for (const auto& g : groups) {
    std::vector<Response> responses;
    for (std::size_t i : g) responses.push_back({*samples[i].response, {}});
    const auto scored = mars.score_group(samples[g.front()], responses, expected);
    for (std::size_t k = 0; k < g.size(); ++k) signals[g[k]] = scored[k];
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_audit_record(audit, samples[i].id, signals[i]);
    sum += signals[i].total;
  }
  if (!audit) throw Error("rewards: cannot write audit log");
  std::printf("scored %zu responses, mean total %.4f\n", samples.size(),
              samples.empty() ? 0.0 : sum / static_cast<double>(samples.size()));
  return 0;
}

int cmd_dedup(const Common& c, const std::string& in, const std::string& out_file, std::optional<double> threshold) {
  ExperimentConfig cfg = resolve(c);
  if (threshold) cfg.dedup.threshold = *threshold;
  const auto samples = load_dataset(in);
  const auto kept = minhash_dedup(samples, cfg.dedup, derive_seed(cfg.seed, "dataset"));
  save_dataset(kept, out_file);
  std::printf("kept %zu of %zu\n", kept.size(), samples.size());
  return 0;
}

int cmd_zipselect(const Common& c, const std::string& in, const std::string& out_file,
                  std::optional<std::size_t> budget) {
  ExperimentConfig cfg = resolve(c);
  if (budget) cfg.zip.budget = *budget;
  const auto samples = load_dataset(in);
  const auto kept = zip_select(samples, cfg.zip);
  save_dataset(kept, out_file);
  std::printf("selected %zu of %zu\n", kept.size(), samples.size());
  return 0;
}

struct SimArgs {
  std::string trace;
  std::string mode;
  std::optional<int> staleness;
  std::string workers;
  int batches = 64;
  std::string durations = "heavy_tail";
  bool compare = false;
};

int cmd_simulate(const Common& c, const SimArgs& a) {
  ExperimentConfig cfg = resolve(c);
  if (!a.mode.empty()) set_config_value(cfg, "scheduler.mode", a.mode);
  if (a.staleness) cfg.scheduler.staleness = *a.staleness;
  if (!a.workers.empty()) set_config_value(cfg, "scheduler.workers", a.workers);
  cfg.scheduler.validate();
  std::vector<StageTask> trace;
  if (!a.trace.empty()) {
    trace = load_trace(a.trace);
  } else {
    DurationModel dm;
    if (a.durations == "constant") {
      dm.kind = DurationKind::constant;
    } else if (a.durations == "uniform") {
      dm.kind = DurationKind::uniform;
    } else if (a.durations == "heavy_tail") {
      dm.kind = DurationKind::heavy_tail;
    } else {
      throw Error("unknown duration model '" + a.durations + "'");
    }
    trace = generate_trace(a.batches, dm, derive_seed(cfg.seed, "scheduler"));
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  if (a.trace.empty()) save_trace(trace, out / "trace.jsonl");
  const SimResult r = simulate(trace, cfg.scheduler);
  std::ofstream log(out / "events.csv");
  write_event_log(log, r.events);
  if (!log) throw Error("cannot write events.csv");
  const SimMetrics& m = r.metrics;
  std::printf("makespan %lld, device idle %lld, throughput %.6f batches/tick, max staleness %d, stall %lld\n",
              static_cast<long long>(m.makespan), static_cast<long long>(m.device_idle()), m.throughput,
              m.max_observed_staleness, static_cast<long long>(m.stall_time));
  if (a.compare) {
    std::vector<int> s_values;
    for (int s = 0; s <= 8; ++s) s_values.push_back(s);
    const auto rows = compare_schedulers(trace, s_values, cfg.scheduler);
    std::ofstream cmp(out / "comparison.csv");
    write_comparison(cmp, rows);
    write_comparison(std::cout, rows);
  }
  return 0;
}

int cmd_detect(const Common& c, const std::string& in, std::size_t sequences, std::size_t max_len) {
  ExperimentConfig cfg = resolve(c);
  const fs::path out(c.out);
  fs::create_directories(out);
  if (!in.empty()) {
    // each line is one response; words are the tokens
    std::ifstream f(in);
    if (!f) throw Error("cannot open " + in);
    std::ofstream csv(out / "detections.csv");
    csv << "line,position,similarity\n";
    std::size_t lines = 0, flagged = 0;
    for (std::string line; std::getline(f, line);) {
      ++lines;
      const auto tokens = word_tokens(line);
      bool hit = false;
      for (std::size_t end = cfg.detector.t_detect; end <= tokens.size(); end += cfg.detector.t_detect) {
        if (auto ev = detect_local_repetition(std::span<const TokenId>(tokens.data(), end), cfg.detector)) {
          csv << lines << ',' << end << ',' << ev->similarity << '\n';
          hit = true;
        }
      }
      flagged += hit ? 1 : 0;
    }
    std::printf("flagged %zu of %zu responses\n", flagged, lines);
    return 0;
  }
  // forced-loop ablation: a policy that loops until it sees the control prompt
  const Vocab vocab = Vocab::toy();
  DetectorConfig det = cfg.detector;
  det.control_prompt = {vocab.id("<repair>")};
  const std::vector<TokenId> loop = vocab.encode("1 + 2 = 3 % 7 = 3");
  const ForcedLoopModel model(vocab.size(), loop, vocab.id("<repair>"), vocab.eos());
  const GenerationConfig gen{0.9, 1.0, 1.5, max_len};
  const RepetitionAblation ab = repetition_ablation(model, 1, sequences, gen, det, vocab.eos(), cfg.seed);
  std::ofstream csv(out / "repair_events.csv");
  csv << "position,output_index,similarity,action\n";
  for (const auto& e : ab.events) {
    csv << e.position << ',' << e.output_index << ',' << e.similarity << ','
        << (e.action == DetectionAction::prompt_injected ? "prompt_injected" : "flagged") << '\n';
  }
  emit_report({}, out, ab);
  std::printf("baseline: flagged %zu truncated %zu; self-repair: injected %zu truncated %zu (of %zu)\n",
              ab.baseline.flagged, ab.baseline.truncated, ab.repair.injected, ab.repair.truncated,
              ab.repair.sequences);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rtrain: toy-scale reasoning-model post-training pipeline"};
  app.require_subcommand(1);
  Common common;
  std::string init, checkpoint, in, out_file, mode = "slow", runner_cmd, syntax_cmd;
  std::optional<double> threshold;
  std::optional<std::size_t> budget;
  std::size_t sequences = 200, max_len = 8192;
  SimArgs sim;

  auto* distill = app.add_subcommand("distill", "iterative distillation with checkpoint merging");
  add_common(distill, common);
  distill->add_option("--init", init, "starting checkpoint (default: pretrained base)");

  auto* rl = app.add_subcommand("rl", "curriculum GRPO training");
  add_common(rl, common);
  rl->add_option("--init", init, "starting checkpoint (default: pretrained base)");

  auto* eval = app.add_subcommand("evaluate", "accuracy with the repeated-run rule");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "policy checkpoint (default: pretrained base)");

  auto* rewards = app.add_subcommand("rewards", "score dataset responses and write an audit log");
  add_common(rewards, common);
  rewards->add_option("--in", in, "JSONL dataset with responses")->required()->check(CLI::ExistingFile);
  rewards->add_option("--mode", mode, "expected thinking mode: fast, slow or any");
  rewards->add_option("--runner", runner_cmd, "external interpreter command (default: built-in toy language)");
  rewards->add_option("--syntax-check", syntax_cmd, "external syntax check command");

  auto* dedup = app.add_subcommand("dedup", "MinHash-LSH near-duplicate removal");
  add_common(dedup, common, false);
  dedup->add_option("--in", in)->required()->check(CLI::ExistingFile);
  dedup->add_option("--out", out_file, "output JSONL")->required();
  dedup->add_option("--threshold", threshold);

  auto* zip = app.add_subcommand("zipselect", "compression-ratio diversity selection");
  add_common(zip, common, false);
  zip->add_option("--in", in)->required()->check(CLI::ExistingFile);
  zip->add_option("--out", out_file, "output JSONL")->required();
  zip->add_option("--budget", budget);

  auto* simc = app.add_subcommand("simulate-scheduler", "discrete-event SSP/BSP pipeline simulation");
  add_common(simc, common);
  simc->add_option("--trace", sim.trace, "JSONL stage trace (default: generated)");
  simc->add_option("--mode", sim.mode, "ssp or bsp");
  simc->add_option("--staleness", sim.staleness);
  simc->add_option("--workers", sim.workers, "workers per stage, e.g. 1,1,1,1");
  simc->add_option("--batches", sim.batches, "batches in a generated trace");
  simc->add_option("--durations", sim.durations, "constant, uniform or heavy_tail");
  simc->add_flag("--compare", sim.compare, "also compare BSP with SSP for s = 0..8");

  auto* detect = app.add_subcommand("detect-repetition", "local repetition detection and self-repair ablation");
  add_common(detect, common);
  detect->add_option("--in", in, "text file, one response per line (default: forced-loop ablation)");
  detect->add_option("--sequences", sequences);
  detect->add_option("--max-len", max_len);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*distill) return cmd_distill(common, init);
    if (*rl) return cmd_rl(common, init);
    if (*eval) return cmd_evaluate(common, checkpoint);
    if (*rewards) return cmd_rewards(common, in, mode, runner_cmd, syntax_cmd);
    if (*dedup) return cmd_dedup(common, in, out_file, threshold);
    if (*zip) return cmd_zipselect(common, in, out_file, budget);
    if (*simc) return cmd_simulate(common, sim);
    if (*detect) return cmd_detect(common, in, sequences, max_len);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rtrain: %s\n", e.what());
    return 1;
  }
  return 1;
}
