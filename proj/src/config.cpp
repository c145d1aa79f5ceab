// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>

#include "rtrain/harness.hpp"

namespace rtrain {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw Error("not a number: '" + v + "'");
  return d;
}

long long to_int(const std::string& v) {
  std::size_t used = 0;
  const long long i = std::stoll(v, &used);
  if (used != v.size()) throw Error("not an integer: '" + v + "'");
  return i;
}

std::size_t to_size(const std::string& v) {
  const long long i = to_int(v);
  if (i < 0) throw Error("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(i);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("not a boolean: '" + v + "'");
}

std::vector<long long> to_ints(const std::string& v, char sep) {
  std::vector<long long> out;
  std::stringstream ss(v);
  for (std::string part; std::getline(ss, part, sep);) out.push_back(to_int(part));
  return out;
}

std::string_view mode_name(ExpectedMode m) {
  switch (m) {
    case ExpectedMode::fast: return "fast";
    case ExpectedMode::slow: return "slow";
    case ExpectedMode::any: return "any";
  }
  return "any";
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define RT_DOUBLE(k, member) \
  Field{k, [](const ExperimentConfig& c) { return fmt(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_double(v); }}
#define RT_INT(k, member) \
  Field{k, [](const ExperimentConfig& c) { return std::to_string(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_int(v)); }}
#define RT_SIZE(k, member) \
  Field{k, [](const ExperimentConfig& c) { return std::to_string(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_size(v); }}
#define RT_BOOL(k, member) \
  Field{k, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_bool(v); }}
#define RT_STRING(k, member) \
  Field{k, [](const ExperimentConfig& c) { return c.member; }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"experiment.seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
      RT_SIZE("experiment.pool_size", pool_size),
      RT_SIZE("experiment.max_positions", max_positions),
      RT_STRING("experiment.dataset", dataset),

      RT_INT("pretrain.traces_per_prompt", pretrain.traces_per_prompt),
      RT_DOUBLE("pretrain.min_corruption", pretrain.min_corruption),
      RT_DOUBLE("pretrain.max_corruption", pretrain.max_corruption),
      RT_DOUBLE("pretrain.smoothing", pretrain.smoothing),

      RT_INT("teacher.candidates", teacher.candidates),
      RT_DOUBLE("teacher.wrong_rate", teacher.wrong_rate),
      RT_DOUBLE("teacher.verbose_rate", teacher.verbose_rate),

      RT_DOUBLE("selection.mu", selection.mu),
      RT_DOUBLE("selection.sigma", selection.sigma),
      RT_INT("selection.k", selection.k),
      RT_DOUBLE("selection.temperature", selection.temperature),

      RT_DOUBLE("merge.lambda", merge.lambda),
      RT_INT("merge.num_checkpoints", merge.num_checkpoints),
      RT_BOOL("merge.enabled", distill.merge),

      RT_INT("distill.iterations", distill.iterations),
      RT_BOOL("distill.stop_on_marginal", distill.stop_on_marginal),
      RT_DOUBLE("distill.min_improvement", distill.min_improvement),
      RT_STRING("distill.few_shot_prefix", distill.few_shot_prefix),
      RT_INT("distill.sft_epochs", distill.sft.epochs),
      RT_DOUBLE("distill.sft_learning_rate", distill.sft.learning_rate),
      RT_SIZE("distill.sft_batch", distill.sft.batch),

      RT_DOUBLE("grpo.eps_low", rl.step.grpo.eps_low),
      RT_DOUBLE("grpo.eps_high", rl.step.grpo.eps_high),
      RT_DOUBLE("grpo.beta", rl.step.grpo.beta),
      RT_DOUBLE("grpo.delta_adv", rl.step.grpo.delta_adv),
      RT_DOUBLE("grpo.learning_rate", rl.step.grpo.learning_rate),
      RT_SIZE("grpo.minibatch", rl.step.grpo.minibatch),
      RT_INT("grpo.updates_per_batch", rl.step.grpo.updates_per_batch),

      RT_SIZE("rl.steps", rl.steps),
      RT_SIZE("rl.prompts_per_step", rl.prompts_per_step),
      Field{"rl.ratio",
            [](const ExperimentConfig& c) {
              return std::to_string(c.rl.ratio[0]) + ":" + std::to_string(c.rl.ratio[1]) + ":" +
                     std::to_string(c.rl.ratio[2]);
            },
            [](ExperimentConfig& c, const std::string& v) {
              const auto r = to_ints(v, ':');
              if (r.size() != 3) throw Error("rl.ratio needs three entries, e.g. 1:7:2");
              for (std::size_t i = 0; i < 3; ++i) c.rl.ratio[i] = static_cast<int>(r[i]);
            }},
      RT_DOUBLE("rl.bucket_low", rl.bucket_low),
      RT_DOUBLE("rl.bucket_high", rl.bucket_high),
      RT_SIZE("rl.eval_every", rl.eval_every),
      RT_SIZE("rl.group_size", rl.step.group_size),
      RT_DOUBLE("rl.temperature", rl.step.generation.temperature),
      RT_DOUBLE("rl.top_p", rl.step.generation.top_p),
      RT_DOUBLE("rl.nsigma", rl.step.generation.nsigma),
      RT_SIZE("rl.max_len", rl.step.generation.max_len),
      RT_BOOL("rl.self_repair", rl.step.self_repair),
      Field{"rl.expected_mode", [](const ExperimentConfig& c) { return std::string(mode_name(c.rl.step.mode)); },
            [](ExperimentConfig& c, const std::string& v) { c.rl.step.mode = parse_expected_mode(v); }},
      RT_INT("rl.threads", rl.step.threads),

      RT_DOUBLE("eval.temperature", eval.generation.temperature),
      RT_DOUBLE("eval.top_p", eval.generation.top_p),
      RT_DOUBLE("eval.nsigma", eval.generation.nsigma),
      RT_SIZE("eval.max_len", eval.generation.max_len),
      RT_SIZE("eval.min_effective", eval.min_effective),

      Field{"rewards.code_scheme",
            [](const ExperimentConfig& c) {
              return std::string(c.mars.code_scheme == CodeScheme::staged ? "staged" : "continuous");
            },
            [](ExperimentConfig& c, const std::string& v) { c.mars.code_scheme = parse_code_scheme(v); }},
      RT_SIZE("rewards.ngram", mars.repetition.ngram),
      RT_DOUBLE("rewards.gamma", mars.repetition.gamma),
      RT_BOOL("rewards.strict_format_reject", mars.strict_format_reject),
      RT_DOUBLE("rewards.math_correct", mars.math_correct),
      RT_DOUBLE("rewards.math_incorrect", mars.math_incorrect),
      RT_INT("rewards.code_threads", mars.code_threads),

      RT_SIZE("repetition.ngram_size", detector.ngram_size),
      RT_SIZE("repetition.window", detector.window),
      RT_DOUBLE("repetition.jaccard_threshold", detector.jaccard_threshold),
      RT_SIZE("repetition.t_detect", detector.t_detect),
      RT_SIZE("repetition.subgram", detector.subgram),

      Field{"scheduler.mode",
            [](const ExperimentConfig& c) { return std::string(c.scheduler.mode == SchedMode::bsp ? "bsp" : "ssp"); },
            [](ExperimentConfig& c, const std::string& v) { c.scheduler.mode = parse_sched_mode(v); }},
      RT_INT("scheduler.staleness", scheduler.staleness),
      Field{"scheduler.workers",
            [](const ExperimentConfig& c) {
              std::string s;
              for (int w : c.scheduler.workers) s += (s.empty() ? "" : ",") + std::to_string(w);
              return s;
            },
            [](ExperimentConfig& c, const std::string& v) {
              const auto w = to_ints(v, ',');
              if (w.size() != kNumStages) throw Error("scheduler.workers needs four counts");
              for (std::size_t i = 0; i < kNumStages; ++i) c.scheduler.workers[i] = static_cast<int>(w[i]);
            }},
      RT_SIZE("scheduler.device_capacity", scheduler.device_capacity),
      RT_SIZE("scheduler.host_capacity", scheduler.host_capacity),
      RT_INT("scheduler.device_latency", scheduler.device_latency),
      RT_DOUBLE("scheduler.host_latency_factor", scheduler.host_latency_factor),
      RT_BOOL("scheduler.co_schedule", scheduler.co_schedule),

      RT_INT("dedup.ngram_size", dedup.ngram_size),
      RT_INT("dedup.num_hashes", dedup.num_hashes),
      RT_INT("dedup.bands", dedup.bands),
      RT_INT("dedup.rows", dedup.rows),
      RT_DOUBLE("dedup.threshold", dedup.threshold),

      RT_SIZE("zipselect.budget", zip.budget),
      RT_STRING("zipselect.compressor", zip.compressor),
      RT_SIZE("zipselect.chunk_size", zip.chunk_size),
  };
  return f;
}

#undef RT_DOUBLE
#undef RT_INT
#undef RT_SIZE
#undef RT_BOOL
#undef RT_STRING

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto& fs = fields();
  const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return key == f.key; });
  if (it == fs.end()) throw Error("config: unknown key '" + key + "'");
  try {
    it->set(cfg, value);
  } catch (const std::exception& e) {
    throw Error("config: " + key + ": " + e.what());
  }
}

namespace {

ExperimentConfig from_ptree(const boost::property_tree::ptree& tree) {
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error("config: key '" + section + "' outside any section");
    for (const auto& [key, node] : body) set_config_value(cfg, section + "." + key, node.data());
  }
  cfg.validate();
  return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (pool_size < 2) throw Error("config: pool_size must be >= 2");
  if (max_positions < 2) throw Error("config: max_positions must be >= 2");
  if (pretrain.traces_per_prompt < 1) throw Error("config: pretrain.traces_per_prompt must be >= 1");
  if (!(pretrain.min_corruption >= 0.0 && pretrain.min_corruption <= pretrain.max_corruption &&
        pretrain.max_corruption <= 1.0)) {
    throw Error("config: need 0 <= pretrain.min_corruption <= pretrain.max_corruption <= 1");
  }
  if (!(pretrain.smoothing > 0.0)) throw Error("config: pretrain.smoothing must be positive");
  if (teacher.candidates < 1) throw Error("config: teacher.candidates must be >= 1");
  selection.validate();
  if (!(merge.lambda >= 0.0 && merge.lambda <= 1.0)) throw Error("config: merge.lambda must be in [0, 1]");
  if (merge.num_checkpoints < 1) throw Error("config: merge.num_checkpoints must be >= 1");
  if (distill.iterations < 1) throw Error("config: distill.iterations must be >= 1");
  if (distill.sft.epochs < 1 || distill.sft.batch < 1 || !(distill.sft.learning_rate > 0.0)) {
    throw Error("config: SFT epochs, batch and learning rate must be positive");
  }
  rl.step.validate();
  if (rl.prompts_per_step < 1) throw Error("config: rl.prompts_per_step must be >= 1");
  eval.generation.validate();
  if (eval.min_effective < 1) throw Error("config: eval.min_effective must be >= 1");
  detector.validate();
  scheduler.validate();
  dedup.validate();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  return from_ptree(tree);
}

ExperimentConfig config_from_ini_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  return from_ptree(tree);
}

std::string config_to_ini_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      out << (out.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
    }
    out << key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace rtrain
