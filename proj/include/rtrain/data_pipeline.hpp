// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training-pool ingestion: sample records, rule filtering, MinHash-LSH
// near-duplicate removal and compression-ratio (ZIP) diversity selection.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rtrain {

enum class TaskLabel { math, code, general };

std::string_view to_string(TaskLabel label);
TaskLabel parse_task_label(std::string_view s);

struct Annotations {
  std::string subcategory;
  std::string question_type;
  bool verifiable = false;
  std::optional<int> computation_complexity;  // C_c, 1..5
  std::optional<int> thinking_complexity;     // T_c, 1..5
};

struct CodeTestCase {
  std::string input;
  std::string expected_output;
  int timeout_ms = 1000;
};

struct DataSample {
  std::string id;
  std::string prompt;
  std::optional<std::string> reference_answer;
  TaskLabel task_label = TaskLabel::general;
  Annotations annotations;
  std::string source;
  // Extensions: a teacher/model response and code test cases, both optional.
  std::optional<std::string> response;
  std::vector<CodeTestCase> test_cases;

  bool operator==(const DataSample&) const;
};

/// Throws on duplicate ids or out-of-range complexity annotations.
void validate_samples(const std::vector<DataSample>& samples);

// -- persistence: one JSON object per line, UTF-8 --

std::string sample_to_json_line(const DataSample& s);
DataSample sample_from_json_line(std::string_view line, std::size_t line_number = 0);

void save_dataset(const std::vector<DataSample>& samples, const std::filesystem::path& path);
/// Errors name the 1-based line number of the offending record.
std::vector<DataSample> load_dataset(const std::filesystem::path& path);

// -- prior filtering --

struct FilterRule {
  std::string name;
  std::function<bool(const DataSample&)> keep;
};

/// Keeps samples passing every rule, order preserved. Rejects duplicate ids.
std::vector<DataSample> prior_filter(const std::vector<DataSample>& samples,
                                     const std::vector<FilterRule>& rules);

FilterRule require_verifiable();
FilterRule require_question_type(std::string type);
FilterRule min_prompt_words(std::size_t n);

// -- MinHash-LSH --

struct DedupConfig {
  int ngram_size = 5;  // word shingles
  int num_hashes = 128;
  int bands = 32;
  int rows = 4;
  double threshold = 0.8;

  void validate() const;
};

/// Word-level n-gram shingles hashed to 64 bits. Texts shorter than n words
/// yield a single shingle of all their words; empty text yields no shingles.
std::vector<std::uint64_t> shingle_hashes(std::string_view text, int ngram_size);

class MinHasher {
 public:
  MinHasher(int num_hashes, std::uint64_t seed);

  std::vector<std::uint64_t> signature(const std::vector<std::uint64_t>& shingles) const;
  static double estimate(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b);

 private:
  std::vector<std::uint64_t> a_;
  std::vector<std::uint64_t> b_;
};

/// Drops exact duplicates and any sample whose estimated Jaccard with an
/// earlier surviving LSH candidate reaches cfg.threshold. Deterministic per seed.
std::vector<DataSample> minhash_dedup(const std::vector<DataSample>& samples,
                                      const DedupConfig& cfg, std::uint64_t seed);

// -- ZIP selection --

struct ZipSelectConfig {
  std::size_t budget = 1;
  std::string compressor = "zlib-deflate-9";
  std::size_t chunk_size = 64 * 1024;
};

/// Compressed byte count under the named compressor.
std::size_t compressed_size(std::string_view bytes, std::string_view compressor);

/// raw_size / compressed_size; higher means more redundant.
double compression_ratio(std::string_view bytes, std::string_view compressor);

/// Greedy diversity selection: seed with the lowest individual ratio, then add
/// the candidate that minimises the ratio of (selected window + candidate).
std::vector<DataSample> zip_select(const std::vector<DataSample>& samples,
                                   const ZipSelectConfig& cfg);

}  // namespace rtrain
