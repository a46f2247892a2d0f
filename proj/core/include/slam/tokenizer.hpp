// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer. Text is split on whitespace; inside a chunk, runs of
// ASCII letters form one token, every digit is its own token and every other
// character is a single-character token. Newlines are tokens.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slam/tensor.hpp"

namespace slam {

class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr std::string_view kNewline = "\n";

  Tokenizer() = default;
  // Builds a vocabulary of the three specials followed by `words` in the
  // given order (duplicates dropped).
  explicit Tokenizer(const std::vector<std::string>& words);

  static std::vector<std::string> split(std::string_view text);

  // Throws DataError on an out-of-vocabulary word.
  std::vector<TokenId> encode(std::string_view text) const;
  // Space-joined tokens; runs of digits are merged back into numbers,
  // newlines are emitted without padding and special tokens are skipped.
  std::string decode(std::span<const TokenId> ids) const;

  std::optional<TokenId> find(std::string_view word) const;
  const std::string& token(TokenId id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return vocab_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  bool is_special(TokenId id) const { return id == kPad || id == kBos || id == kEos; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace slam
