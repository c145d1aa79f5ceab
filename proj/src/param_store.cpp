// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "rtrain/param_store.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "rtrain/common.hpp"

namespace rtrain {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'T', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8;

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw Error(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                std::to_string(b) + ")");
  }
}

}  // namespace

ParamVector::ParamVector(Eigen::Index dim) : values_(Eigen::VectorXd::Zero(dim)) {
  if (dim <= 0) throw Error("ParamVector: dim must be positive");
}

ParamVector::ParamVector(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() <= 0) throw Error("ParamVector: dim must be positive");
  check_finite();
}

void ParamVector::check_finite() const {
  if (!values_.allFinite()) throw Error("ParamVector: non-finite value");
}

CheckpointSet::CheckpointSet(std::vector<ParamVector> checkpoints, int iteration)
    : checkpoints_(std::move(checkpoints)), iteration_(iteration) {
  if (checkpoints_.empty()) throw Error("CheckpointSet: at least one checkpoint required");
  if (iteration_ < 1) throw Error("CheckpointSet: iteration must be >= 1");
  for (const auto& c : checkpoints_) {
    require_same_dim(c.dim(), checkpoints_.front().dim(), "CheckpointSet");
  }
}

ParamVector average_delta(const CheckpointSet& checkpoints, const ParamVector& reference) {
  require_same_dim(checkpoints.dim(), reference.dim(), "average_delta");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(reference.dim());
  for (const auto& c : checkpoints.checkpoints()) sum += c.values() - reference.values();
  return ParamVector(Eigen::VectorXd(sum / static_cast<double>(checkpoints.size())));
}

ParamVector merge_iteration(const ParamVector& prev_merged, const CheckpointSet& checkpoints,
                            double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("merge_iteration: lambda must be in [0,1]");
  prev_merged.check_finite();
  for (const auto& c : checkpoints.checkpoints()) c.check_finite();
  // The identity endpoints are returned exactly rather than through floating-point arithmetic.
  if (lambda == 0.0) return prev_merged;
  if (lambda == 1.0 && checkpoints.size() == 1) {
    require_same_dim(checkpoints.dim(), prev_merged.dim(), "merge_iteration");
    return checkpoints.checkpoints().front();
  }
  ParamVector delta = average_delta(checkpoints, prev_merged);
  return ParamVector(Eigen::VectorXd(prev_merged.values() + lambda * delta.values()));
}

void save_checkpoint(const ParamVector& params, const std::filesystem::path& path) {
  params.check_finite();
  std::string buf;
  buf.reserve(kHeaderBytes + 8 * static_cast<std::size_t>(params.dim()) + 8);
  buf.append(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(buf, kFormatVersion);
  put_le<std::uint32_t>(buf, 0);
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(params.dim()));
  for (Eigen::Index i = 0; i < params.dim(); ++i) put_le<double>(buf, params[i]);
  put_le<std::uint64_t>(buf, fnv1a(std::string_view(buf).substr(kHeaderBytes)));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("save_checkpoint: cannot open " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("save_checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("save_checkpoint: rename failed: " + ec.message());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes) throw Error("load_checkpoint: truncated header");
  if (std::memcmp(buf.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error("load_checkpoint: bad magic");
  }
  if (get_le<std::uint32_t>(buf.data() + 8) != kFormatVersion) {
    throw Error("load_checkpoint: unsupported version");
  }
  const auto dim = get_le<std::uint64_t>(buf.data() + 16);
  if (dim == 0 || dim > (buf.size() / 8)) throw Error("load_checkpoint: bad dimension");
  const std::size_t expected = kHeaderBytes + 8 * dim + 8;
  if (buf.size() != expected) {
    throw Error("load_checkpoint: size " + std::to_string(buf.size()) + ", expected " +
                std::to_string(expected) + " (truncated or corrupt)");
  }
  const std::string_view payload = std::string_view(buf).substr(kHeaderBytes, 8 * dim);
  if (fnv1a(payload) != get_le<std::uint64_t>(buf.data() + kHeaderBytes + 8 * dim)) {
    throw Error("load_checkpoint: checksum mismatch");
  }
  Eigen::VectorXd values(static_cast<Eigen::Index>(dim));
  for (std::uint64_t i = 0; i < dim; ++i) {
    values[static_cast<Eigen::Index>(i)] = get_le<double>(buf.data() + kHeaderBytes + 8 * i);
  }
  return ParamVector(std::move(values));
}

}  // namespace rtrain
