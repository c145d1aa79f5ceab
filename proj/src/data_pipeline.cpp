// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/data_pipeline.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "rtrain/common.hpp"

namespace rtrain {

using nlohmann::json;

std::string_view to_string(TaskLabel label) {
  switch (label) {
    case TaskLabel::math: return "math";
    case TaskLabel::code: return "code";
    case TaskLabel::general: return "general";
  }
  return "general";
}

TaskLabel parse_task_label(std::string_view s) {
  if (s == "math") return TaskLabel::math;
  if (s == "code") return TaskLabel::code;
  if (s == "general") return TaskLabel::general;
  throw Error("unknown task_label '" + std::string(s) + "'");
}

bool DataSample::operator==(const DataSample& o) const {
  auto ann = [](const Annotations& a) {
    return std::tie(a.subcategory, a.question_type, a.verifiable, a.computation_complexity,
                    a.thinking_complexity);
  };
  auto tc = [](const std::vector<CodeTestCase>& v) {
    std::vector<std::tuple<std::string, std::string, int>> out;
    for (const auto& c : v) out.emplace_back(c.input, c.expected_output, c.timeout_ms);
    return out;
  };
  return id == o.id && prompt == o.prompt && reference_answer == o.reference_answer &&
         task_label == o.task_label && ann(annotations) == ann(o.annotations) &&
         source == o.source && response == o.response && tc(test_cases) == tc(o.test_cases);
}

void validate_samples(const std::vector<DataSample>& samples) {
  std::unordered_set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw Error("duplicate sample id '" + s.id + "'");
    for (const auto& c : {s.annotations.computation_complexity, s.annotations.thinking_complexity}) {
      if (c && (*c < 1 || *c > 5)) {
        throw Error("sample '" + s.id + "': complexity annotation out of [1,5]");
      }
    }
  }
}

// -- persistence --

std::string sample_to_json_line(const DataSample& s) {
  json j;
  j["id"] = s.id;
  j["prompt"] = s.prompt;
  j["reference_answer"] = s.reference_answer ? json(*s.reference_answer) : json(nullptr);
  j["task_label"] = std::string(to_string(s.task_label));
  json a;
  a["subcategory"] = s.annotations.subcategory;
  a["question_type"] = s.annotations.question_type;
  a["verifiable"] = s.annotations.verifiable;
  a["computation_complexity"] = s.annotations.computation_complexity
                                    ? json(*s.annotations.computation_complexity)
                                    : json(nullptr);
  a["thinking_complexity"] = s.annotations.thinking_complexity
                                 ? json(*s.annotations.thinking_complexity)
                                 : json(nullptr);
  j["annotations"] = a;
  j["source"] = s.source;
  if (s.response) j["response"] = *s.response;
  if (!s.test_cases.empty()) {
    json cases = json::array();
    for (const auto& c : s.test_cases) {
      cases.push_back({{"input", c.input}, {"expected_output", c.expected_output},
                       {"timeout_ms", c.timeout_ms}});
    }
    j["test_cases"] = cases;
  }
  return j.dump();
}

DataSample sample_from_json_line(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(where + "malformed record: " + e.what());
  }
  if (!j.is_object()) throw Error(where + "record is not an object");
  for (const char* field : {"id", "prompt", "task_label"}) {
    if (!j.contains(field) || !j[field].is_string()) {
      throw Error(where + "missing required field '" + field + "'");
    }
  }
  try {
    DataSample s;
    s.id = j["id"].get<std::string>();
    s.prompt = j["prompt"].get<std::string>();
    s.task_label = parse_task_label(j["task_label"].get<std::string>());
    if (j.contains("reference_answer") && !j["reference_answer"].is_null()) {
      s.reference_answer = j["reference_answer"].get<std::string>();
    }
    if (j.contains("source")) s.source = j["source"].get<std::string>();
    if (j.contains("annotations") && j["annotations"].is_object()) {
      const auto& a = j["annotations"];
      s.annotations.subcategory = a.value("subcategory", "");
      s.annotations.question_type = a.value("question_type", "");
      s.annotations.verifiable = a.value("verifiable", false);
      if (a.contains("computation_complexity") && !a["computation_complexity"].is_null()) {
        s.annotations.computation_complexity = a["computation_complexity"].get<int>();
      }
      if (a.contains("thinking_complexity") && !a["thinking_complexity"].is_null()) {
        s.annotations.thinking_complexity = a["thinking_complexity"].get<int>();
      }
    }
    if (j.contains("response") && !j["response"].is_null()) {
      s.response = j["response"].get<std::string>();
    }
    if (j.contains("test_cases")) {
      for (const auto& c : j["test_cases"]) {
        s.test_cases.push_back({c.at("input").get<std::string>(),
                                c.at("expected_output").get<std::string>(),
                                c.value("timeout_ms", 1000)});
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(where + "bad field type: " + e.what());
  }
}

void save_dataset(const std::vector<DataSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("save_dataset: cannot open " + path.string());
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  if (!out) throw Error("save_dataset: write failed for " + path.string());
}

std::vector<DataSample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_dataset: cannot open " + path.string());
  std::vector<DataSample> samples;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    samples.push_back(sample_from_json_line(line, n));
  }
  validate_samples(samples);
  return samples;
}

// -- prior filtering --

std::vector<DataSample> prior_filter(const std::vector<DataSample>& samples,
                                     const std::vector<FilterRule>& rules) {
  validate_samples(samples);
  std::vector<DataSample> out;
  for (const auto& s : samples) {
    if (std::all_of(rules.begin(), rules.end(), [&](const FilterRule& r) { return r.keep(s); })) {
      out.push_back(s);
    }
  }
  return out;
}

FilterRule require_verifiable() {
  return {"verifiable", [](const DataSample& s) { return s.annotations.verifiable; }};
}

FilterRule require_question_type(std::string type) {
  return {"question_type=" + type,
          [type](const DataSample& s) { return s.annotations.question_type == type; }};
}

FilterRule min_prompt_words(std::size_t n) {
  return {"min_words", [n](const DataSample& s) {
            std::size_t words = 0;
            bool in_word = false;
            for (char c : s.prompt) {
              const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
              if (!space && !in_word) ++words;
              in_word = !space;
            }
            return words >= n;
          }};
}

// -- MinHash-LSH --

void DedupConfig::validate() const {
  if (ngram_size < 1 || num_hashes < 1 || bands < 1 || rows < 1) {
    throw Error("DedupConfig: sizes must be positive");
  }
  if (bands * rows != num_hashes) throw Error("DedupConfig: bands * rows must equal num_hashes");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw Error("DedupConfig: threshold not in (0,1]");
}

namespace {

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

std::uint64_t mod61(unsigned __int128 x) {
  std::uint64_t r = static_cast<std::uint64_t>(x & kMersenne61) + static_cast<std::uint64_t>(x >> 61);
  r = (r & kMersenne61) + (r >> 61);
  return r >= kMersenne61 ? r - kMersenne61 : r;
}

}  // namespace

std::vector<std::uint64_t> shingle_hashes(std::string_view text, int ngram_size) {
  const auto words = split_words(text);
  std::vector<std::uint64_t> out;
  if (words.empty()) return out;
  const std::size_t n = static_cast<std::size_t>(ngram_size);
  const std::size_t count = words.size() >= n ? words.size() - n + 1 : 1;
  const std::size_t width = std::min(n, words.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t k = 0; k < width; ++k) {
      h = fnv1a(words[i + k], h);
      h = fnv1a("\x1f", h);
    }
    out.push_back(splitmix64(h));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MinHasher::MinHasher(int num_hashes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "minhash"));
  for (int i = 0; i < num_hashes; ++i) {
    a_.push_back(1 + rng() % (kMersenne61 - 1));
    b_.push_back(rng() % kMersenne61);
  }
}

std::vector<std::uint64_t> MinHasher::signature(const std::vector<std::uint64_t>& shingles) const {
  std::vector<std::uint64_t> sig(a_.size(), kMersenne61);
  for (std::uint64_t s : shingles) {
    const std::uint64_t x = mod61(s);
    for (std::size_t i = 0; i < a_.size(); ++i) {
      const std::uint64_t h = mod61(static_cast<unsigned __int128>(a_[i]) * x + b_[i]);
      sig[i] = std::min(sig[i], h);
    }
  }
  return sig;
}

double MinHasher::estimate(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  if (a.size() != b.size() || a.empty()) throw Error("MinHasher::estimate: signature size mismatch");
  std::size_t eq = 0;
  for (std::size_t i = 0; i < a.size(); ++i) eq += (a[i] == b[i]);
  return static_cast<double>(eq) / static_cast<double>(a.size());
}

std::vector<DataSample> minhash_dedup(const std::vector<DataSample>& samples,
                                      const DedupConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const MinHasher hasher(cfg.num_hashes, seed);

  // Signatures are independent per sample; the resolution pass below is sequential.
  std::vector<std::vector<std::uint64_t>> sigs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sigs[i] = hasher.signature(shingle_hashes(samples[i].prompt, cfg.ngram_size));
  }

  std::unordered_set<std::string_view> exact;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
  std::vector<std::size_t> kept;

  auto band_key = [&](std::size_t i, int band) {
    std::uint64_t h = splitmix64(static_cast<std::uint64_t>(band) + 1);
    for (int r = 0; r < cfg.rows; ++r) h = splitmix64(h ^ sigs[i][band * cfg.rows + r]);
    return h;
  };

  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!exact.insert(samples[i].prompt).second) continue;
    std::set<std::size_t> candidates;
    std::vector<std::uint64_t> keys(cfg.bands);
    for (int band = 0; band < cfg.bands; ++band) {
      keys[band] = band_key(i, band);
      if (auto it = buckets.find(keys[band]); it != buckets.end()) {
        candidates.insert(it->second.begin(), it->second.end());
      }
    }
    const bool duplicate = std::any_of(candidates.begin(), candidates.end(), [&](std::size_t j) {
      return MinHasher::estimate(sigs[i], sigs[j]) >= cfg.threshold;
    });
    if (duplicate) continue;
    kept.push_back(i);
    for (std::uint64_t k : keys) buckets[k].push_back(i);
  }

  std::vector<DataSample> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(samples[i]);
  return out;
}

// -- ZIP selection --

std::size_t compressed_size(std::string_view bytes, std::string_view compressor) {
  int level = 0;
  if (compressor.starts_with("zlib-deflate-") && compressor.size() == 14 &&
      compressor.back() >= '0' && compressor.back() <= '9') {
    level = compressor.back() - '0';
  } else {
    throw Error("unknown compressor '" + std::string(compressor) + "'");
  }
  uLongf dest_len = compressBound(static_cast<uLong>(bytes.size()));
  std::string dest(dest_len, '\0');
  const int rc = compress2(reinterpret_cast<Bytef*>(dest.data()), &dest_len,
                           reinterpret_cast<const Bytef*>(bytes.data()),
                           static_cast<uLong>(bytes.size()), level);
  if (rc != Z_OK) throw Error("compressor failure (zlib rc=" + std::to_string(rc) + ")");
  return static_cast<std::size_t>(dest_len);
}

double compression_ratio(std::string_view bytes, std::string_view compressor) {
  return static_cast<double>(bytes.size()) /
         static_cast<double>(compressed_size(bytes, compressor));
}

std::vector<DataSample> zip_select(const std::vector<DataSample>& samples,
                                   const ZipSelectConfig& cfg) {
  if (cfg.budget < 1) throw Error("zip_select: budget must be >= 1");
  if (cfg.budget > samples.size()) throw Error("zip_select: budget exceeds sample count");
  if (cfg.chunk_size < 1) throw Error("zip_select: chunk_size must be positive");

  std::vector<bool> taken(samples.size(), false);
  std::vector<std::size_t> order;
  std::string window;

  // Lower ratio wins; equal ratios fall back to the lexicographically lowest id.
  auto better = [&](double r, std::size_t i, double best_r, std::size_t best_i) {
    if (best_i == samples.size()) return true;
    if (r != best_r) return r < best_r;
    return samples[i].id < samples[best_i].id;
  };

  while (order.size() < cfg.budget) {
    std::size_t best = samples.size();
    double best_ratio = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (taken[i]) continue;
      const double r = order.empty()
                           ? compression_ratio(samples[i].prompt, cfg.compressor)
                           : compression_ratio(window + '\n' + samples[i].prompt, cfg.compressor);
      if (better(r, i, best_ratio, best)) {
        best = i;
        best_ratio = r;
      }
    }
    taken[best] = true;
    order.push_back(best);
    if (!window.empty()) window += '\n';
    window += samples[best].prompt;
    if (window.size() > cfg.chunk_size) window.erase(0, window.size() - cfg.chunk_size);
  }

  std::vector<DataSample> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(samples[i]);
  return out;
}

}  // namespace rtrain
