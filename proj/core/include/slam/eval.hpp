// SPDX-License-Identifier: Apache-2.0
//
// Greedy decoding, answer extraction, per-language accuracy and the
// prediction consistency ratio.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slam/corpus.hpp"
#include "slam/model.hpp"
#include "slam/rational.hpp"
#include "slam/tokenizer.hpp"

namespace slam {

inline constexpr int kDefaultMaxNewTokens = 128;

// Argmax continuation of `prompt`, without the prompt and without the EOS.
// Stops at EOS, after max_new_tokens, or when the context is full. Throws
// DataError if the prompt alone does not fit the context.
std::vector<TokenId> generate_tokens(const Model& model, std::span<const TokenId> prompt,
                                     int max_new_tokens = kDefaultMaxNewTokens);
// Encodes "[BOS] prompt" and decodes the continuation.
std::string generate(const Model& model, const Tokenizer& tok, std::string_view prompt,
                     int max_new_tokens = kDefaultMaxNewTokens);

// Last numeric token of `text` (optional sign, digits, optional decimal
// part, commas dropped). A malformed token keeps its longest valid prefix,
// so "7..5" reads as 7.
std::optional<Rational> extract_answer(std::string_view text);

// Produces a response for a test sample.
using Responder = std::function<std::string(const Sample&)>;
Responder model_responder(const Model& model, const Tokenizer& tok,
                          int max_new_tokens = kDefaultMaxNewTokens);

struct LanguageResult {
  std::string lang;
  std::size_t total = 0;
  std::set<std::string> correct;  // problem ids
  double accuracy = 0.0;          // correct.size() / total
};

// Scores every sample of `lang` in `test`. Throws DataError when there is
// none, or when a sample has no gold answer.
LanguageResult accuracy(std::span<const Sample> test, std::string_view lang, const Responder& respond);

// |M ∩ N| / |M|. Throws UndefinedError for empty M.
double pcr(const std::set<std::string>& english_correct, const std::set<std::string>& other_correct);

struct EvalReport {
  std::string split;
  std::uint64_t model_checksum = 0;
  int max_new_tokens = kDefaultMaxNewTokens;
  std::vector<LanguageResult> languages;  // English first when present
  std::map<std::string, double> pcr;      // non-English; empty without English

  const LanguageResult& result(std::string_view lang) const;
  // Means over non-English languages.
  double avg_non_english_accuracy() const;
  double avg_pcr() const;
};

// Languages are taken in order of first appearance in `test`.
EvalReport evaluate(std::span<const Sample> test, const Responder& respond, std::string split = {});
EvalReport evaluate_model(const Model& model, const Tokenizer& tok, std::span<const Sample> test,
                          std::string split = {}, int max_new_tokens = kDefaultMaxNewTokens);

// With a baseline, per-language accuracy/PCR deltas are included.
void save_report(const std::filesystem::path& path, const EvalReport& report,
                 const EvalReport* baseline = nullptr);
EvalReport load_report(const std::filesystem::path& path);
// Rows `lang,accuracy,pcr`; the English row has an empty pcr field.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace slam
