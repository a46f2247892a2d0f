// SPDX-License-Identifier: Apache-2.0

#include "slam/tokenizer.hpp"

#include <cctype>

#include "slam/error.hpp"

namespace slam {
namespace {

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
  for (std::string_view s : {"<pad>", "<bos>", "<eos>"}) {
    index_.emplace(std::string(s), static_cast<TokenId>(vocab_.size()));
    vocab_.emplace_back(s);
  }
  for (const std::string& w : words) {
    if (index_.emplace(w, static_cast<TokenId>(vocab_.size())).second) vocab_.push_back(w);
  }
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      out.emplace_back(kNewline);
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      ++i;
    } else if (is_alpha(c)) {
      std::size_t j = i;
      while (j < text.size() && is_alpha(text[j])) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const std::string& w : split(text)) {
    auto it = index_.find(w);
    if (it == index_.end()) throw DataError("tokenizer: out-of-vocabulary word '" + w + "'");
    ids.push_back(it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  bool prev_digit = false;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size() || is_special(id)) continue;
    const std::string& t = vocab_[static_cast<std::size_t>(id)];
    const bool digit = t.size() == 1 && is_digit(t[0]);
    if (t == kNewline) {
      out += '\n';
    } else {
      if (!out.empty() && out.back() != '\n' && !(digit && prev_digit)) out += ' ';
      out += t;
    }
    prev_digit = digit;
  }
  return out;
}

std::optional<TokenId> Tokenizer::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

}  // namespace slam
