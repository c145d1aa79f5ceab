// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rabin-Karp polynomial hashing of token n-grams modulo 2^61 - 1.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rtrain/common.hpp"

namespace rtrain {

class RollingHash {
 public:
  static constexpr std::uint64_t kMod = (std::uint64_t{1} << 61) - 1;
  static constexpr std::uint64_t kBase = 0x1f3a9c5b7d21ULL % kMod;

  static std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
    const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    std::uint64_t r = static_cast<std::uint64_t>(p & kMod) + static_cast<std::uint64_t>(p >> 61);
    r = (r & kMod) + (r >> 61);
    return r >= kMod ? r - kMod : r;
  }
  static std::uint64_t add(std::uint64_t a, std::uint64_t b) {
    const std::uint64_t r = a + b;
    return r >= kMod ? r - kMod : r;
  }
  static std::uint64_t sub(std::uint64_t a, std::uint64_t b) { return a >= b ? a - b : a + kMod - b; }

  static std::uint64_t symbol(TokenId t) {
    return splitmix64(static_cast<std::uint64_t>(static_cast<std::uint32_t>(t))) % kMod;
  }

  /// Hashes of every contiguous n-gram, in order; one O(1) update per step.
  /// The optional counter is incremented once per hash produced.
  static std::vector<std::uint64_t> ngram_hashes(std::span<const TokenId> tokens, std::size_t n,
                                                 std::uint64_t* ops = nullptr) {
    std::vector<std::uint64_t> out;
    if (n == 0 || tokens.size() < n) return out;
    out.reserve(tokens.size() - n + 1);
    std::uint64_t top = 1;  // kBase^(n-1)
    for (std::size_t i = 1; i < n; ++i) top = mul(top, kBase);
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < n; ++i) h = add(mul(h, kBase), symbol(tokens[i]));
    out.push_back(h);
    for (std::size_t i = n; i < tokens.size(); ++i) {
      h = sub(h, mul(symbol(tokens[i - n]), top));
      h = add(mul(h, kBase), symbol(tokens[i]));
      out.push_back(h);
    }
    if (ops) *ops += out.size();
    return out;
  }
};

}  // namespace rtrain
