// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cctype>
#include <filesystem>
#include <random>
#include <regex>

#include "slam/error.hpp"
#include "slam/eval.hpp"

namespace slam {
namespace {

TEST(ExtractAnswer, Examples) {
  EXPECT_EQ(extract_answer("3 + 4 = 7, so the answer is 7.5"), Rational(15, 2));
  EXPECT_EQ(extract_answer("no numbers here"), std::nullopt);
  EXPECT_EQ(extract_answer("total: -2,500."), Rational(-2500));
  EXPECT_EQ(extract_answer("7..5"), Rational(7));
  EXPECT_EQ(extract_answer("The answer is 12 ."), Rational(12));
  EXPECT_EQ(extract_answer("x-3 then 4-2"), Rational(2));
  EXPECT_EQ(extract_answer(""), std::nullopt);
}

// Independent oracle: last match of the token pattern (a sign glued to a
// letter or digit is not a sign), commas removed, then the longest
// well-formed prefix.
std::optional<Rational> regex_oracle(const std::string& text) {
  static const std::regex token(R"(-?[0-9][0-9.,]*)");
  std::string last;
  bool found = false;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), token); it != std::sregex_iterator(); ++it) {
    last = it->str();
    const auto pos = static_cast<std::size_t>(it->position());
    if (last[0] == '-' && pos > 0 && std::isalnum(static_cast<unsigned char>(text[pos - 1]))) last.erase(0, 1);
    found = true;
  }
  if (!found) return std::nullopt;
  std::erase(last, ',');
  std::smatch m;
  std::regex_search(last, m, std::regex(R"(^-?[0-9]+(\.[0-9]+)?)"));
  return Rational::parse(m.str());
}

TEST(ExtractAnswer, MatchesRegexOracle) {
  std::mt19937_64 rng(77);
  const std::string alphabet = "0123456789.,- ab";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    const auto len = rng() % 14;
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
    EXPECT_EQ(extract_answer(s), regex_oracle(s)) << '"' << s << '"';
  }
}

Sample make_sample(std::string id, std::string lang, std::int64_t gold) {
  Sample s;
  s.id = id + ":" + lang;
  s.lang = std::move(lang);
  s.prompt = "q";
  s.gold = Rational(gold);
  return s;
}

TEST(Accuracy, StubResponders) {
  std::vector<Sample> test;
  for (int i = 0; i < 10; ++i) test.push_back(make_sample("p" + std::to_string(i), "en", i + 1));
  const Responder gold = [](const Sample& s) { return "The answer is " + s.gold->to_string() + " ."; };
  EXPECT_DOUBLE_EQ(accuracy(test, "en", gold).accuracy, 1.0);
  const Responder mute = [](const Sample&) { return std::string("I do not know"); };
  EXPECT_DOUBLE_EQ(accuracy(test, "en", mute).accuracy, 0.0);
}

TEST(Accuracy, HandBuiltThreeOfFour) {
  std::vector<Sample> test = {make_sample("a", "en", 5), make_sample("b", "en", 6), make_sample("c", "en", 7),
                              make_sample("d", "en", 8)};
  const std::map<std::string, std::string> replies = {
      {"a:en", "5"}, {"b:en", "so 6"}, {"c:en", "1 then 7"}, {"d:en", "80"}};
  const auto r = accuracy(test, "en", [&](const Sample& s) { return replies.at(s.id); });
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_EQ(r.correct, (std::set<std::string>{"a", "b", "c"}));
}

TEST(Accuracy, Errors) {
  const Responder any = [](const Sample&) { return std::string("1"); };
  std::vector<Sample> test = {make_sample("a", "en", 1)};
  EXPECT_THROW(accuracy(test, "xa", any), DataError);
  test[0].gold.reset();
  EXPECT_THROW(accuracy(test, "en", any), DataError);
}

TEST(Pcr, Examples) {
  const std::set<std::string> m = {"a", "b", "c", "d"};
  EXPECT_DOUBLE_EQ(pcr(m, {"b", "c"}), 0.5);
  EXPECT_DOUBLE_EQ(pcr(m, {"a", "b", "c", "d", "e"}), 1.0);
  EXPECT_DOUBLE_EQ(pcr(m, {"x", "y"}), 0.0);
  EXPECT_THROW(pcr({}, {"a"}), UndefinedError);
}

TEST(Pcr, RandomBounds) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::set<std::string> m, n;
    for (int i = 0; i < 30; ++i) {
      if (rng() % 2) m.insert(std::to_string(i));
      if (rng() % 2) n.insert(std::to_string(i));
    }
    if (m.empty()) m.insert("0");
    const double v = pcr(m, n);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(pcr(m, m), 1.0);
  }
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_inter = 32;
  c.vocab_size = 24;
  c.max_seq_len = 20;
  c.seed = 8;
  return c;
}

TEST(Generate, DeterministicAndBounded) {
  const Model m(tiny_config());
  const std::vector<TokenId> prompt = {Tokenizer::kBos, 5, 6, 7};
  const auto a = generate_tokens(m, prompt, 10);
  EXPECT_EQ(a, generate_tokens(m, prompt, 10));
  EXPECT_LE(a.size(), 10u);
  EXPECT_TRUE(generate_tokens(m, prompt, 0).empty());
  // Context of 20 leaves room for 16 new tokens.
  EXPECT_LE(generate_tokens(m, prompt, 100).size(), 16u);
  const std::vector<TokenId> too_long(21, 5);
  EXPECT_THROW(generate_tokens(m, too_long, 1), DataError);
}

TEST(Generate, MatchesFullForwardArgmax) {
  const Model m(tiny_config());
  std::vector<TokenId> seq = {Tokenizer::kBos, 9, 4};
  const auto out = generate_tokens(m, seq, 8);
  for (TokenId t : out) {
    Eigen::Index best = 0;
    const auto logits = m.forward(seq).logits;
    logits.row(logits.rows() - 1).maxCoeff(&best);
    EXPECT_EQ(t, static_cast<TokenId>(best));
    seq.push_back(t);
  }
}

TEST(Generate, EosFirstGivesEmpty) {
  Model m(tiny_config());
  m.weight(0, Block::output).setZero();
  m.weight(0, Block::output).col(Tokenizer::kEos).setConstant(1.0f);
  // Every other logit is zero; flip the EOS column if its logit is negative.
  const std::vector<TokenId> prompt = {Tokenizer::kBos, 5};
  const auto h = m.forward(prompt).logits;
  if (h(1, Tokenizer::kEos) <= 0.0f) m.weight(0, Block::output).col(Tokenizer::kEos) *= -1.0f;
  EXPECT_TRUE(generate_tokens(m, prompt, 5).empty());
}

std::vector<Sample> two_language_test() {
  std::vector<Sample> t;
  for (int i = 0; i < 6; ++i) {
    t.push_back(make_sample("p" + std::to_string(i), "xa", i));
    t.push_back(make_sample("p" + std::to_string(i), "en", i));
  }
  return t;
}

TEST(Report, ConsistentWithCorrectSets) {
  const auto test = two_language_test();
  // English right on even ids, xa right on ids divisible by 3.
  const Responder r = [](const Sample& s) {
    const auto g = s.gold->num();
    const bool ok = s.lang == "en" ? g % 2 == 0 : g % 3 == 0;
    return std::to_string(ok ? g : g + 100);
  };
  const auto rep = evaluate(test, r, "in_domain");
  ASSERT_EQ(rep.languages.size(), 2u);
  EXPECT_EQ(rep.languages[0].lang, "en");
  for (const auto& l : rep.languages) {
    EXPECT_DOUBLE_EQ(l.accuracy, static_cast<double>(l.correct.size()) / static_cast<double>(l.total));
  }
  EXPECT_EQ(rep.result("en").correct, (std::set<std::string>{"p0", "p2", "p4"}));
  EXPECT_DOUBLE_EQ(rep.pcr.at("xa"), pcr(rep.result("en").correct, rep.result("xa").correct));
  EXPECT_DOUBLE_EQ(rep.pcr.at("xa"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.avg_non_english_accuracy(), 2.0 / 6.0);
}

TEST(Report, NoEnglishCorrectLeavesPcrEmpty) {
  const auto rep = evaluate(two_language_test(), [](const Sample&) { return std::string("none"); });
  EXPECT_TRUE(rep.pcr.empty());
}

TEST(Report, EvaluationHasNoSideEffectsAndIsDeterministic) {
  const auto corpus_cfg = [] {
    CorpusConfig c;
    c.n_train = 20;
    c.n_translation = 10;
    c.n_test = 3;
    c.min_steps = c.max_steps = 2;
    return c;
  }();
  const Corpus corpus = build_datasets(corpus_cfg);
  ModelConfig mc;
  mc.n_layers = 2;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.d_inter = 32;
  mc.vocab_size = static_cast<int>(corpus.tokenizer.size());
  mc.max_seq_len = 192;
  const Model m(mc);
  const auto before = parameter_checksum(m);
  const auto a = evaluate_model(m, corpus.tokenizer, corpus.test_in_domain, "in_domain", 4);
  const auto b = evaluate_model(m, corpus.tokenizer, corpus.test_in_domain, "in_domain", 4);
  EXPECT_EQ(parameter_checksum(m), before);
  EXPECT_EQ(a.model_checksum, before);
  ASSERT_EQ(a.languages.size(), b.languages.size());
  EXPECT_EQ(a.languages.size(), corpus.languages.size());
  for (std::size_t i = 0; i < a.languages.size(); ++i) {
    EXPECT_EQ(a.languages[i].correct, b.languages[i].correct);
    EXPECT_EQ(a.languages[i].total, 3u);
  }
}

TEST(Report, FileRoundTrip) {
  const Responder r = [](const Sample& s) { return std::to_string(s.gold->num() % 2 == 0 ? s.gold->num() : -1); };
  const auto rep = evaluate(two_language_test(), r, "ood");
  const auto dir = std::filesystem::temp_directory_path() / "slam_eval_test";
  save_report(dir / "report.json", rep, &rep);
  const auto back = load_report(dir / "report.json");
  EXPECT_EQ(back.split, "ood");
  ASSERT_EQ(back.languages.size(), 2u);
  EXPECT_EQ(back.languages[1].correct, rep.languages[1].correct);
  EXPECT_EQ(back.pcr, rep.pcr);
  write_report_csv(dir / "report.csv", rep);
  EXPECT_TRUE(std::filesystem::exists(dir / "report.csv"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace slam
