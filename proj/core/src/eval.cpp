// SPDX-License-Identifier: Apache-2.0

#include "slam/eval.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "json_io.hpp"
#include "slam/decoder.hpp"
#include "slam/error.hpp"

namespace slam {

std::vector<TokenId> generate_tokens(const Model& model, std::span<const TokenId> prompt, int max_new_tokens) {
  if (prompt.empty()) throw DataError("generate: empty prompt");
  const auto capacity = static_cast<std::size_t>(model.config().max_seq_len);
  if (prompt.size() > capacity) {
    throw DataError("generate: prompt of " + std::to_string(prompt.size()) + " tokens exceeds context " +
                    std::to_string(capacity));
  }
  std::vector<TokenId> out;
  if (max_new_tokens <= 0) return out;
  Decoder<float> dec(model);
  RowVec<float> logits = dec.prefill(prompt);
  for (int i = 0; i < max_new_tokens; ++i) {
    Eigen::Index next = 0;
    logits.maxCoeff(&next);
    const auto id = static_cast<TokenId>(next);
    if (id == Tokenizer::kEos || prompt.size() + out.size() >= capacity) break;
    out.push_back(id);
    if (i + 1 == max_new_tokens) break;
    logits = dec.step(id);
  }
  return out;
}

std::string generate(const Model& model, const Tokenizer& tok, std::string_view prompt, int max_new_tokens) {
  std::vector<TokenId> ids = {Tokenizer::kBos};
  for (TokenId t : tok.encode(prompt)) ids.push_back(t);
  return tok.decode(generate_tokens(model, ids, max_new_tokens));
}

std::optional<Rational> extract_answer(std::string_view text) {
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  std::optional<std::string> last;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool signed_start = text[i] == '-' && i + 1 < text.size() && digit(text[i + 1]) &&
                              (i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1])));
    if (!digit(text[i]) && !signed_start) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && (digit(text[j]) || text[j] == '.' || text[j] == ',')) ++j;
    std::string token;
    for (std::size_t k = i; k < j; ++k) {
      if (text[k] != ',') token += text[k];
    }
    last = token;
    i = j;
  }
  if (!last) return std::nullopt;
  // Longest prefix of the form -?digits(.digits)?
  const std::string& s = *last;
  std::size_t end = s[0] == '-' ? 1 : 0;
  while (end < s.size() && digit(s[end])) ++end;
  if (end + 1 < s.size() && s[end] == '.' && digit(s[end + 1])) {
    ++end;
    while (end < s.size() && digit(s[end])) ++end;
  }
  return Rational::parse(std::string_view(s).substr(0, end));
}

Responder model_responder(const Model& model, const Tokenizer& tok, int max_new_tokens) {
  return [&model, &tok, max_new_tokens](const Sample& s) {
    return tok.decode(generate_tokens(model, encode_prompt(tok, s), max_new_tokens));
  };
}

LanguageResult accuracy(std::span<const Sample> test, std::string_view lang, const Responder& respond) {
  LanguageResult r;
  r.lang = std::string(lang);
  for (const Sample& s : test) {
    if (s.lang != lang) continue;
    if (!s.gold) throw DataError("test sample " + s.id + " has no gold answer");
    ++r.total;
    const auto got = extract_answer(respond(s));
    if (got && *got == *s.gold) r.correct.insert(s.problem_id());
  }
  if (r.total == 0) throw DataError("no test samples for language '" + std::string(lang) + "'");
  r.accuracy = static_cast<double>(r.correct.size()) / static_cast<double>(r.total);
  return r;
}

double pcr(const std::set<std::string>& english_correct, const std::set<std::string>& other_correct) {
  if (english_correct.empty()) throw UndefinedError("PCR undefined: no question answered correctly in English");
  std::size_t both = 0;
  for (const auto& id : english_correct) both += other_correct.count(id);
  return static_cast<double>(both) / static_cast<double>(english_correct.size());
}

const LanguageResult& EvalReport::result(std::string_view lang) const {
  for (const auto& r : languages) {
    if (r.lang == lang) return r;
  }
  throw DataError("report has no language '" + std::string(lang) + "'");
}

double EvalReport::avg_non_english_accuracy() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : languages) {
    if (r.lang == kEnglishTag) continue;
    sum += r.accuracy;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

double EvalReport::avg_pcr() const {
  if (pcr.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [lang, v] : pcr) sum += v;
  return sum / static_cast<double>(pcr.size());
}

EvalReport evaluate(std::span<const Sample> test, const Responder& respond, std::string split) {
  EvalReport rep;
  rep.split = std::move(split);
  std::vector<std::string> langs;
  for (const Sample& s : test) {
    if (std::find(langs.begin(), langs.end(), s.lang) == langs.end()) langs.push_back(s.lang);
  }
  std::stable_partition(langs.begin(), langs.end(), [](const std::string& l) { return l == kEnglishTag; });
  for (const auto& l : langs) rep.languages.push_back(accuracy(test, l, respond));
  if (!langs.empty() && langs.front() == kEnglishTag && !rep.languages.front().correct.empty()) {
    for (std::size_t i = 1; i < rep.languages.size(); ++i) {
      rep.pcr[rep.languages[i].lang] = pcr(rep.languages.front().correct, rep.languages[i].correct);
    }
  }
  return rep;
}

EvalReport evaluate_model(const Model& model, const Tokenizer& tok, std::span<const Sample> test,
                          std::string split, int max_new_tokens) {
  EvalReport rep = evaluate(test, model_responder(model, tok, max_new_tokens), std::move(split));
  rep.model_checksum = parameter_checksum(model);
  rep.max_new_tokens = max_new_tokens;
  return rep;
}

namespace {

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["model_checksum"] = r.model_checksum;
  j["max_new_tokens"] = r.max_new_tokens;
  j["decoding"] = "greedy";
  nlohmann::json langs = nlohmann::json::array();
  for (const auto& l : r.languages) {
    langs.push_back({{"lang", l.lang},
                     {"total", l.total},
                     {"accuracy", l.accuracy},
                     {"correct", std::vector<std::string>(l.correct.begin(), l.correct.end())}});
  }
  j["languages"] = langs;
  j["pcr"] = r.pcr;
  j["avg_non_english_accuracy"] = r.avg_non_english_accuracy();
  j["avg_pcr"] = r.avg_pcr();
  return j;
}

}  // namespace

void save_report(const std::filesystem::path& path, const EvalReport& report, const EvalReport* baseline) {
  nlohmann::json j = report_json(report);
  if (baseline) {
    nlohmann::json d;
    for (const auto& l : report.languages) {
      for (const auto& b : baseline->languages) {
        if (b.lang == l.lang) d["accuracy"][l.lang] = l.accuracy - b.accuracy;
      }
    }
    for (const auto& [lang, v] : report.pcr) {
      if (baseline->pcr.count(lang)) d["pcr"][lang] = v - baseline->pcr.at(lang);
    }
    d["avg_non_english_accuracy"] = report.avg_non_english_accuracy() - baseline->avg_non_english_accuracy();
    d["avg_pcr"] = report.avg_pcr() - baseline->avg_pcr();
    j["deltas"] = d;
  }
  write_json_file(path, j);
}

EvalReport load_report(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    EvalReport r;
    r.split = j.at("split").get<std::string>();
    r.model_checksum = j.at("model_checksum").get<std::uint64_t>();
    r.max_new_tokens = j.at("max_new_tokens").get<int>();
    for (const auto& l : j.at("languages")) {
      LanguageResult lr;
      lr.lang = l.at("lang").get<std::string>();
      lr.total = l.at("total").get<std::size_t>();
      lr.accuracy = l.at("accuracy").get<double>();
      const auto ids = l.at("correct").get<std::vector<std::string>>();
      lr.correct = {ids.begin(), ids.end()};
      r.languages.push_back(std::move(lr));
    }
    r.pcr = j.at("pcr").get<std::map<std::string, double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed report " + path.string() + ": " + e.what());
  }
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "lang,accuracy,pcr\n";
  for (const auto& l : report.languages) {
    out << l.lang << ',' << l.accuracy << ',';
    if (report.pcr.count(l.lang)) out << report.pcr.at(l.lang);
    out << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace slam
