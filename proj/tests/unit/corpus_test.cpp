// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "slam/corpus.hpp"
#include "slam/error.hpp"

namespace slam {
namespace {

CorpusConfig small_config() {
  CorpusConfig c;
  c.n_train = 200;
  c.n_translation = 60;
  c.n_test = 20;
  c.seed = 99;
  return c;
}

// Recovers the step sequence from an English question by reading verbs,
// without consulting the generator's template bookkeeping.
std::string step_signature(const std::string& question) {
  std::istringstream in(question);
  std::string w;
  std::string sig;
  bool first_has = true;
  while (in >> w) {
    if (w == "has" && first_has) {
      first_has = false;
    } else if (w == "buys" || w == "finds" || w == "gives" || w == "loses" || w == "doubles") {
      sig += w + ";";
    }
  }
  return sig;
}

std::optional<std::string> last_number(const std::string& text) {
  std::regex num("-?[0-9]+");
  std::optional<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), num); it != std::sregex_iterator(); ++it) {
    out = it->str();
  }
  return out;
}

TEST(Rational, ParsesAndNormalizes) {
  EXPECT_EQ(Rational::parse("12"), Rational(12));
  EXPECT_EQ(Rational::parse("-3"), Rational(-3));
  EXPECT_EQ(Rational::parse("7.5"), Rational(15, 2));
  EXPECT_EQ(Rational::parse("15/2"), Rational(15, 2));
  EXPECT_EQ(Rational(4, -6), Rational(-2, 3));
  EXPECT_FALSE(Rational::parse("").has_value());
  EXPECT_FALSE(Rational::parse("1/0").has_value());
  EXPECT_FALSE(Rational::parse("x").has_value());
  EXPECT_EQ(Rational(15, 2).to_string(), "15/2");
  EXPECT_EQ(Rational(-8).to_string(), "-8");
  EXPECT_LT(Rational(1, 3), Rational(1, 2));
}

TEST(Tokenizer, SplitsDigitsAndPunctuation) {
  const auto parts = Tokenizer::split("Let's add 12,\nok");
  const std::vector<std::string> want = {"Let", "'", "s", "add", "1", "2", ",", "\n", "ok"};
  EXPECT_EQ(parts, want);
}

TEST(Tokenizer, RoundTripsNumbersAndRejectsUnknown) {
  Tokenizer tok({"a", "is", "1", "2", "3", ".", "\n"});
  EXPECT_EQ(tok.size(), 10u);
  const auto ids = tok.encode("a is 123 .");
  EXPECT_EQ(ids.size(), 6u);
  EXPECT_EQ(tok.decode(ids), "a is 123 .");
  EXPECT_THROW(tok.encode("b"), DataError);
  std::vector<TokenId> with_specials = {Tokenizer::kBos, ids[0], Tokenizer::kEos};
  EXPECT_EQ(tok.decode(with_specials), "a");
}

TEST(Templates, RenderPlaceholders) {
  EXPECT_EQ(render_translation_prompt("Xa", "foo ."),
            "Translate this from [Xa] to [English]:\n[Xa]: foo .\n[English]:");
  const std::string p = render_inference_prompt("Q ?");
  EXPECT_NE(p.find("### Instruction:\nQ ?\n\n### Response: Let's think step by step."), std::string::npos);
}

TEST(ToyLanguage, RoundTripsEveryOrderRule) {
  std::mt19937_64 rng(5);
  for (OrderRule rule : {OrderRule::identity, OrderRule::svo_to_sov, OrderRule::reversal}) {
    const ToyLanguage lang = make_language(11, "xq", rule);
    for (int i = 0; i < 50; ++i) {
      const auto& tmpl = problem_templates()[rng() % problem_templates().size()];
      const Problem p = gen_problem(rng, tmpl);
      EXPECT_EQ(lang.decode(lang.encode(p.question)), p.question);
      EXPECT_EQ(lang.decode(lang.encode(p.answer)), p.answer);
      EXPECT_NE(lang.encode(p.question), p.question);
    }
  }
}

TEST(ToyLanguage, OrderRulesPermuteWithinSentences) {
  const ToyLanguage en = ToyLanguage::english();
  EXPECT_EQ(en.encode("Tom has 5 pens ."), "Tom has 5 pens .");
  const ToyLanguage rev = make_language(3, "xr", OrderRule::reversal);
  const auto& m = rev.vocab_map();
  EXPECT_EQ(rev.encode("Tom has 5 pens . How many pens ?"),
            m.at("pens") + " 5 " + m.at("has") + " " + m.at("Tom") + " . " + m.at("pens") + " " +
                m.at("many") + " " + m.at("How") + " ?");
  const ToyLanguage sov = make_language(3, "xs", OrderRule::svo_to_sov);
  const auto& s = sov.vocab_map();
  EXPECT_EQ(sov.encode("Tom has 5 pens ."), s.at("Tom") + " 5 " + s.at("pens") + " " + s.at("has") + " .");
}

TEST(ToyLanguage, DeterministicAndDisjoint) {
  const ToyLanguage a = make_language(42, "xa", OrderRule::identity);
  const ToyLanguage a2 = make_language(42, "xa", OrderRule::identity);
  const ToyLanguage b = make_language(43, "xb", OrderRule::identity);
  EXPECT_EQ(a.vocab_map(), a2.vocab_map());
  const auto wa = a.surface_words();
  const auto wb = b.surface_words();
  std::set<std::string> sa(wa.begin(), wa.end());
  EXPECT_EQ(sa.size(), english_lexicon().size());
  for (const auto& w : wb) EXPECT_EQ(sa.count(w), 0u) << w;
  for (const auto& w : english_lexicon()) EXPECT_EQ(sa.count(w), 0u) << w;
}

TEST(ToyLanguage, RejectsBadAndDuplicateTags) {
  LanguageRegistry reg;
  reg.add(1, "xa", OrderRule::identity);
  EXPECT_THROW(reg.add(2, "xa", OrderRule::reversal), ConfigError);
  EXPECT_THROW(make_language(1, "en", OrderRule::identity), ConfigError);
  EXPECT_THROW(make_language(1, "Xa", OrderRule::identity), ConfigError);
}

TEST(Problems, TemplateCatalogue) {
  const auto& t = problem_templates();
  EXPECT_EQ(t.size(), 25u + 125u + 625u);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].id, static_cast<int>(i));
}

TEST(Problems, BuyStepGold) {
  ProblemSpec s{{StepKind::buy}, "Tom", "Ann", "apples", 2, {3}};
  const Problem p = render_problem(s);
  EXPECT_EQ(p.gold, Rational(5));
  EXPECT_EQ(p.question, "Tom has 2 apples . Tom buys 3 more apples . How many apples does Tom have now ?");
  EXPECT_EQ(p.answer,
            "Tom has 2 apples . Tom buys 3 more apples , so 2 + 3 = 5 . The answer is 5 .");
}

TEST(Problems, MultiStepGold) {
  ProblemSpec s{{StepKind::give, StepKind::twice, StepKind::lose}, "Sue", "Bob", "pens", 9, {4, 0, 3}};
  EXPECT_EQ(render_problem(s).gold, Rational(7));
  ProblemSpec bad{{StepKind::lose}, "Sue", "Bob", "pens", 3, {3}};
  EXPECT_THROW(render_problem(bad), DataError);
}

TEST(Problems, GoldIsLastNumberAndValuesStayBounded) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto& tmpl = problem_templates()[rng() % problem_templates().size()];
    const Problem p = gen_problem(rng, tmpl);
    ASSERT_EQ(last_number(p.answer), p.gold.to_string());
    EXPECT_GT(p.gold, Rational(0));
    EXPECT_LT(p.gold, Rational(100));
    EXPECT_EQ(p.answer.substr(p.answer.size() - p.gold.to_string().size() - 16),
              "The answer is " + p.gold.to_string() + " .");
  }
}

TEST(Problems, SeededGenerationReproducible) {
  std::mt19937_64 a(3);
  std::mt19937_64 b(3);
  for (int i = 0; i < 20; ++i) {
    const auto& tmpl = problem_templates()[static_cast<std::size_t>(i)];
    EXPECT_EQ(gen_problem(a, tmpl).question, gen_problem(b, tmpl).question);
  }
}

TEST(Datasets, SplitsAreDisjointByProblemId) {
  const Corpus c = build_datasets(small_config());
  std::set<std::string> train_ids;
  std::set<std::string> train_questions;
  for (const auto& s : c.reasoning_train) {
    train_ids.insert(s.problem_id());
    train_questions.insert(s.prompt);
  }
  EXPECT_EQ(train_ids.size(), 200u);
  for (const auto* split : {&c.test_in_domain, &c.test_out_of_domain}) {
    EXPECT_EQ(split->size(), 20u * c.languages.size());
    for (const auto& s : *split) {
      EXPECT_EQ(train_ids.count(s.problem_id()), 0u);
      if (s.lang == "en") EXPECT_EQ(train_questions.count(s.prompt), 0u);
    }
  }
  for (const auto& s : c.translation_train) EXPECT_EQ(train_ids.count(s.problem_id()), 1u);
}

TEST(Datasets, OutOfDomainUsesUnseenTemplates) {
  const Corpus c = build_datasets(small_config());
  std::set<std::string> train_sigs;
  for (const auto& s : c.reasoning_train) train_sigs.insert(step_signature(s.prompt));
  for (const auto& s : c.test_out_of_domain) {
    if (s.lang != "en") continue;
    EXPECT_EQ(train_sigs.count(step_signature(s.prompt)), 0u) << s.prompt;
  }
  std::size_t in_domain_hits = 0;
  for (const auto& s : c.test_in_domain) {
    if (s.lang == "en") in_domain_hits += train_sigs.count(step_signature(s.prompt));
  }
  EXPECT_GT(in_domain_hits, 0u);
  for (int t : c.ood_templates) EXPECT_EQ(c.in_domain_templates.count(t), 0u);
  EXPECT_EQ(c.ood_templates.size(), 155u);
}

TEST(Datasets, TranslationTargetsPairWithEnglishRendering) {
  const Corpus c = build_datasets(small_config());
  std::map<std::string, const Sample*> en;
  for (const auto& s : c.reasoning_train) en[s.id] = &s;
  std::map<std::string, int> per_lang;
  std::set<char> kinds;
  for (const auto& s : c.translation_train) {
    ++per_lang[s.lang];
    const Sample& e = *en.at(s.problem_id());
    const char kind = s.id.back();
    kinds.insert(kind);
    if (kind == 'a') {
      EXPECT_EQ(s.target, e.target);
    } else {
      EXPECT_EQ(render_inference_prompt(s.target), e.prompt);
    }
    const auto& lang = *std::find_if(c.languages.begin(), c.languages.end(),
                                     [&](const ToyLanguage& l) { return l.tag() == s.lang; });
    EXPECT_EQ(s.prompt, render_translation_prompt(lang.display_name(), lang.encode(s.target)));
    EXPECT_FALSE(s.gold.has_value());
  }
  EXPECT_EQ(kinds, (std::set<char>{'q', 'a'}));
  EXPECT_EQ(per_lang["xa"], 60);
  EXPECT_EQ(per_lang["xi"], 12);
  EXPECT_EQ(per_lang.count("en"), 0u);
}

TEST(Datasets, EnglishTranslationPairsJoinTheBaseSet) {
  CorpusConfig cfg = small_config();
  cfg.n_english_translation = 7;
  const Corpus c = build_datasets(cfg);
  const Corpus plain = build_datasets(small_config());
  ASSERT_EQ(c.reasoning_train.size(), plain.reasoning_train.size() + 7);
  EXPECT_EQ(c.translation_train.size(), plain.translation_train.size());
  for (std::size_t i = 0; i < plain.reasoning_train.size(); ++i) {
    EXPECT_EQ(c.reasoning_train[i].prompt, plain.reasoning_train[i].prompt);
  }
  for (std::size_t i = plain.reasoning_train.size(); i < c.reasoning_train.size(); ++i) {
    const Sample& s = c.reasoning_train[i];
    EXPECT_EQ(s.lang, "en");
    EXPECT_EQ(s.task, TaskKind::translation);
    EXPECT_EQ(s.prompt, render_translation_prompt("English", s.target));
  }
  cfg.n_english_translation = -1;
  EXPECT_THROW(build_datasets(cfg), ConfigError);
}

TEST(Datasets, GoldIdenticalAcrossLanguages) {
  const Corpus c = build_datasets(small_config());
  std::map<std::string, Rational> gold;
  for (const auto& s : c.test_in_domain) {
    ASSERT_TRUE(s.gold.has_value());
    auto [it, fresh] = gold.emplace(s.problem_id(), *s.gold);
    if (!fresh) EXPECT_EQ(it->second, *s.gold);
  }
}

TEST(Datasets, TokenizerCoversEverything) {
  const Corpus c = build_datasets(small_config());
  for (const auto* split : {&c.reasoning_train, &c.translation_train, &c.test_in_domain, &c.test_out_of_domain}) {
    for (const auto& s : *split) {
      EXPECT_NO_THROW(c.tokenizer.encode(s.prompt));
      EXPECT_NO_THROW(c.tokenizer.encode(s.target));
    }
  }
}

TEST(Datasets, DeterministicBytesAndJsonlRoundTrip) {
  const Corpus a = build_datasets(small_config());
  const Corpus b = build_datasets(small_config());
  const auto dir = std::filesystem::temp_directory_path() / "slam_corpus_test";
  write_jsonl(dir / "a.jsonl", a.test_in_domain);
  write_jsonl(dir / "b.jsonl", b.test_in_domain);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  const auto back = read_jsonl(dir / "a.jsonl");
  ASSERT_EQ(back.size(), a.test_in_domain.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(to_jsonl_line(back[i]), to_jsonl_line(a.test_in_domain[i]));
  }
  const std::string line = to_jsonl_line(a.translation_train.front());
  EXPECT_EQ(line.rfind("{\"id\":", 0), 0u);
  EXPECT_NE(line.find("\"gold\":null"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Datasets, RejectsBadConfigs) {
  CorpusConfig c = small_config();
  c.n_test = 0;
  EXPECT_THROW(build_datasets(c), ConfigError);
  c = small_config();
  c.languages = {{"en", OrderRule::identity, false}};
  EXPECT_THROW(build_datasets(c), ConfigError);
  c = small_config();
  c.languages = {{"xa", OrderRule::identity, false}, {"en", OrderRule::identity, false}};
  EXPECT_THROW(build_datasets(c), ConfigError);
  c = small_config();
  c.min_steps = 3;
  c.max_steps = 2;
  EXPECT_THROW(build_datasets(c), ConfigError);
  EXPECT_THROW(sample_from_jsonl_line("{\"id\":1}"), DataError);
  EXPECT_THROW(sample_from_jsonl_line("not json"), DataError);
}

TEST(Encoding, MaskCoversTargetAndEos) {
  const Corpus c = build_datasets(small_config());
  const Sample& s = c.translation_train.front();
  const TrainingExample ex = encode_for_training(c.tokenizer, s);
  const auto prompt = encode_prompt(c.tokenizer, s);
  const auto target = c.tokenizer.encode(s.target);
  ASSERT_EQ(ex.tokens.size(), prompt.size() + target.size() + 1);
  EXPECT_EQ(ex.tokens.front(), Tokenizer::kBos);
  EXPECT_EQ(ex.tokens.back(), Tokenizer::kEos);
  for (std::size_t i = 0; i < ex.tokens.size(); ++i) EXPECT_EQ(ex.mask[i] != 0, i >= prompt.size());
  EXPECT_EQ(ex.target_count(), target.size() + 1);
}

}  // namespace
}  // namespace slam
