// Copyright 2026 The rtrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

namespace rtrain {

inline constexpr std::string_view kThinkOpenTag = "<think>";
inline constexpr std::string_view kThinkCloseTag = "</think>";

struct ThinkTags {
  std::size_t opens = 0;
  std::size_t closes = 0;
  std::size_t first_open = std::string_view::npos;
  std::size_t first_close = std::string_view::npos;
  bool leading = false;  // first non-space characters are the open tag

  bool none() const { return opens == 0 && closes == 0; }
  /// Exactly one block, opening the response, closed after it opens.
  bool single_leading_block() const {
    return opens == 1 && closes == 1 && leading && first_close > first_open;
  }
  bool balanced() const {
    return opens == closes && (opens == 0 || first_close > first_open);
  }
};

inline ThinkTags scan_think_tags(std::string_view text) {
  ThinkTags t;
  auto count = [&](std::string_view tag, std::size_t& n, std::size_t& first) {
    for (std::size_t pos = text.find(tag); pos != std::string_view::npos;
         pos = text.find(tag, pos + tag.size())) {
      if (n++ == 0) first = pos;
    }
  };
  count(kThinkOpenTag, t.opens, t.first_open);
  count(kThinkCloseTag, t.closes, t.first_close);
  const std::size_t body = text.find_first_not_of(" \t\r\n");
  t.leading = body != std::string_view::npos && text.substr(body).starts_with(kThinkOpenTag);
  return t;
}

}  // namespace rtrain
