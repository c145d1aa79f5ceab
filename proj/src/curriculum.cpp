// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "rtrain/think_format.hpp"

namespace rtrain {

ComplexityScore ComplexityScore::from_passes(int passes, int k) {
  if (k < 1 || passes < 0 || passes > k) throw Error("ComplexityScore: need 0 <= passes <= k, k >= 1");
  return {1.0 - static_cast<double>(passes) / static_cast<double>(k), k, passes};
}

void SelectionConfig::validate() const {
  if (!(sigma > 0.0)) throw Error("SelectionConfig: sigma must be positive");
  if (k < 1) throw Error("SelectionConfig: k must be >= 1");
  if (!(temperature > 0.0)) throw Error("SelectionConfig: temperature must be positive");
}

RolloutFn model_rollout(const SequenceModel& model, std::function<std::size_t(const DataSample&)> slot,
                        GenerationConfig gen, TokenId eos) {
  gen.validate();
  return [&model, slot = std::move(slot), gen, eos](const DataSample& s, std::uint64_t seed) {
    return sample_response(model, slot(s), gen, eos, seed).tokens;
  };
}

ComplexityScore complexity_score(const DataSample& sample, const RolloutFn& rollout, const VerifyFn& verify,
                                 const SelectionConfig& cfg) {
  cfg.validate();
  const std::uint64_t id_hash = fnv1a(sample.id);
  int passes = 0;
  for (int i = 0; i < cfg.k; ++i) {
    const auto y = rollout(sample, derive_seed(cfg.seed ^ id_hash, "complexity", static_cast<std::uint64_t>(i)));
    passes += verify(sample, y) ? 1 : 0;
  }
  return ComplexityScore::from_passes(passes, cfg.k);
}

double selection_probability(double c, double mu, double sigma) {
  if (!(sigma > 0.0)) throw Error("selection_probability: sigma must be positive");
  const double d = c - mu;
  return std::exp(-d * d / (2.0 * sigma * sigma));
}

std::vector<DataSample> select_by_scores(const std::vector<DataSample>& samples, std::span<const double> scores,
                                         const SelectionConfig& cfg) {
  cfg.validate();
  if (scores.size() != samples.size()) throw Error("select_by_scores: one score per sample required");
  Rng rng(derive_seed(cfg.seed, "selection"));
  std::vector<DataSample> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (uniform01(rng) < selection_probability(scores[i], cfg.mu, cfg.sigma)) kept.push_back(samples[i]);
  }
  return kept;
}

SelectionResult select_samples(const std::vector<DataSample>& samples, const RolloutFn& rollout,
                               const VerifyFn& verify, const SelectionConfig& cfg, std::string_view few_shot_prefix) {
  cfg.validate();
  SelectionResult out;
  std::vector<double> values;
  for (const auto& s : samples) {
    DataSample x = s;
    if (!few_shot_prefix.empty()) x.prompt = std::string(few_shot_prefix) + "\n" + x.prompt;
    out.scores.push_back(complexity_score(x, rollout, verify, cfg));
    values.push_back(out.scores.back().value);
  }
  out.kept = select_by_scores(samples, values, cfg);
  return out;
}

CurriculumBuckets bucket_by_complexity(const std::vector<DataSample>& samples, std::span<const double> scores,
                                       double low, double high) {
  if (!(low > 0.0 && high < 1.0 && low < high)) throw Error("bucket_by_complexity: need 0 < low < high < 1");
  if (scores.size() != samples.size()) throw Error("bucket_by_complexity: one score per sample required");
  CurriculumBuckets b;
  b.low = low;
  b.high = high;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (scores[i] <= low) {
      b.easy.push_back(samples[i]);
    } else if (scores[i] >= high) {
      b.hard.push_back(samples[i]);
    } else {
      b.medium.push_back(samples[i]);
    }
  }
  return b;
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<int, 3>& ratio) {
  if (std::any_of(ratio.begin(), ratio.end(), [](int r) { return r < 0; })) {
    throw Error("apportion: ratio entries must be >= 0");
  }
  const auto total = static_cast<std::size_t>(std::accumulate(ratio.begin(), ratio.end(), 0));
  if (total == 0) throw Error("apportion: ratio must not be all zero");
  std::array<std::size_t, 3> counts{};
  std::array<std::size_t, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t q = n * static_cast<std::size_t>(ratio[i]);
    counts[i] = q / total;
    rem[i] = q % total;
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++counts[order[j]];
  return counts;
}

MixedBatch mix_curriculum(const CurriculumBuckets& buckets, std::size_t batch_size, const std::array<int, 3>& ratio,
                          std::uint64_t seed) {
  MixedBatch out;
  if (batch_size == 0) return out;
  out.counts = apportion(batch_size, ratio);
  const std::array<const std::vector<DataSample>*, 3> src{&buckets.easy, &buckets.medium, &buckets.hard};
  for (std::size_t b = 0; b < 3; ++b) {
    if (out.counts[b] == 0) continue;
    const auto& pool = *src[b];
    if (pool.empty()) throw Error("mix_curriculum: empty bucket with a non-zero ratio entry");
    Rng rng(derive_seed(seed, "curriculum", b));
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < out.counts[b]; ++i) {
      const std::size_t pick = i < idx.size() ? idx[i] : uniform_index(rng, pool.size());
      out.samples.push_back(pool[pick]);
    }
  }
  Rng rng(derive_seed(seed, "curriculum-order"));
  std::shuffle(out.samples.begin(), out.samples.end(), rng);
  return out;
}

Difficulty classify_difficulty(int cc, int tc) {
  if (cc < 1 || cc > 5 || tc < 1 || tc > 5) throw Error("classify_difficulty: complexities must be in [1, 5]");
  return cc <= 2 && tc <= 2 ? Difficulty::easy : Difficulty::hard;
}

std::string_view to_string(ThinkingMode m) { return m == ThinkingMode::fast ? "fast" : "slow"; }

ThinkingMode parse_thinking_mode(std::string_view s) {
  if (s == "fast") return ThinkingMode::fast;
  if (s == "slow") return ThinkingMode::slow;
  throw Error("unknown thinking mode '" + std::string(s) + "'");
}

ThinkingMode detect_thinking_mode(std::string_view response) {
  const ThinkTags t = scan_think_tags(response);
  if (!t.balanced()) throw Error("detect_thinking_mode: unbalanced think tags");
  return t.single_leading_block() ? ThinkingMode::slow : ThinkingMode::fast;
}

std::string direct_form(std::string_view response) {
  std::string out(response);
  for (std::string_view tag : {kThinkOpenTag, kThinkCloseTag}) {
    for (auto p = out.find(tag); p != std::string::npos; p = out.find(tag, p)) out.erase(p, tag.size());
  }
  // collapse the whitespace runs left behind
  std::string squeezed;
  for (char c : out) {
    const bool space = c == ' ' || c == '\t';
    if (space && (squeezed.empty() || squeezed.back() == ' ' || squeezed.back() == '\n')) continue;
    squeezed += space ? ' ' : c;
  }
  while (!squeezed.empty() && squeezed.back() == ' ') squeezed.pop_back();
  return squeezed;
}

std::vector<FusionSample> build_fusion_dataset(const std::vector<DataSample>& easy, const std::vector<DataSample>& hard,
                                               double balance, bool manual) {
  if (!(balance > 0.0)) throw Error("build_fusion_dataset: balance must be positive");
  const std::size_t n = std::min(easy.size(), hard.size());
  const std::size_t n_slow =
      std::min(hard.size(), static_cast<std::size_t>(std::llround(static_cast<double>(n) * balance)));
  std::vector<FusionSample> out;
  auto prefixed = [&](const DataSample& s, std::string_view meta) {
    DataSample b = s;
    if (manual) b.prompt = std::string(meta) + "\n" + b.prompt;
    return b;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!easy[i].response) throw Error("build_fusion_dataset: easy sample '" + easy[i].id + "' has no response");
    FusionSample f{prefixed(easy[i], kMetaPromptFast), ThinkingMode::fast,
                   manual ? std::string(kMetaPromptFast) : "", ResponseFormat::direct};
    f.base.response = direct_form(*easy[i].response);
    out.push_back(std::move(f));
  }
  for (std::size_t i = 0; i < n_slow; ++i) {
    const auto& r = hard[i].response;
    if (!r) throw Error("build_fusion_dataset: hard sample '" + hard[i].id + "' has no response");
    if (!scan_think_tags(*r).single_leading_block()) {
      throw Error("build_fusion_dataset: slow response for '" + hard[i].id + "' lacks a leading think block");
    }
    out.push_back({prefixed(hard[i], kMetaPromptSlow), ThinkingMode::slow, manual ? std::string(kMetaPromptSlow) : "",
                   ResponseFormat::think_block});
  }
  return out;
}

void save_fusion_dataset(const std::vector<FusionSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("save_fusion_dataset: cannot open " + path.string());
  for (const auto& f : samples) {
    auto j = nlohmann::json::parse(sample_to_json_line(f.base));
    j["mode"] = to_string(f.mode);
    j["meta_prompt"] = f.meta_prompt;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("save_fusion_dataset: write failed for " + path.string());
}

std::vector<FusionSample> load_fusion_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_fusion_dataset: cannot open " + path.string());
  std::vector<FusionSample> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    FusionSample f;
    f.base = sample_from_json_line(line, n);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      f.mode = parse_thinking_mode(j.at("mode").get<std::string>());
      f.meta_prompt = j.value("meta_prompt", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("line " + std::to_string(n) + ": " + e.what());
    }
    f.response_format = f.mode == ThinkingMode::slow ? ResponseFormat::think_block : ResponseFormat::direct;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace rtrain
