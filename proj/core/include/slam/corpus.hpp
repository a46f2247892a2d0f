// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multilingual arithmetic corpus. English word problems with
// step-by-step answers are rendered into toy languages defined by a
// vocabulary bijection plus a per-sentence word-order rule. Digits, symbols
// and punctuation are shared by every language.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "slam/backprop.hpp"
#include "slam/rational.hpp"
#include "slam/tokenizer.hpp"

namespace slam {

inline constexpr std::string_view kEnglishTag = "en";

inline constexpr std::string_view kInferenceTemplate =
    "Below is an instruction that describes a task.\n"
    "Write a response that appropriately completes the request.\n\n"
    "### Instruction:\n{query}\n\n### Response: Let's think step by step.";

inline constexpr std::string_view kTranslationTemplate =
    "Translate this from [{source_lang}] to [English]:\n[{source_lang}]: {source}\n[English]:";

std::string render_inference_prompt(std::string_view query);
std::string render_translation_prompt(std::string_view source_lang, std::string_view source);

enum class OrderRule { identity, svo_to_sov, reversal };
std::string_view to_string(OrderRule r);
OrderRule order_rule_from_string(std::string_view s);

// English words that get translated. Template wrapper words, digits and
// symbols are not part of it.
const std::vector<std::string>& english_lexicon();

class ToyLanguage {
 public:
  // English itself: identity map, identity order.
  static ToyLanguage english();

  const std::string& tag() const { return tag_; }
  // Name used inside prompts, e.g. "English" or "Xa".
  const std::string& display_name() const { return display_name_; }
  OrderRule order_rule() const { return order_; }
  std::uint64_t seed() const { return seed_; }
  bool is_english() const { return tag_ == kEnglishTag; }

  const std::map<std::string, std::string>& vocab_map() const { return to_foreign_; }
  // Surface words of this language (values of the vocabulary map).
  std::vector<std::string> surface_words() const;

  // English text (space-separated tokens) -> this language, and back.
  // Words outside the lexicon (digits, symbols) pass through unchanged.
  std::string encode(std::string_view english_text) const;
  std::string decode(std::string_view foreign_text) const;

 private:
  friend ToyLanguage make_language(std::uint64_t, std::string, OrderRule);
  std::string tag_;
  std::string display_name_;
  OrderRule order_ = OrderRule::identity;
  std::uint64_t seed_ = 0;
  std::map<std::string, std::string> to_foreign_;
  std::map<std::string, std::string> to_english_;
};

// Deterministic bijection over english_lexicon(). Every surface word ends in
// the tag, so two languages with distinct equal-length tags never share a
// word. Tags must be two lowercase letters other than "en".
ToyLanguage make_language(std::uint64_t seed, std::string tag, OrderRule order);

// Creates languages while enforcing tag uniqueness within one run.
class LanguageRegistry {
 public:
  const ToyLanguage& add(std::uint64_t seed, std::string tag, OrderRule order);
  const std::vector<ToyLanguage>& languages() const { return languages_; }

 private:
  std::vector<ToyLanguage> languages_;
};

enum class StepKind { buy, find, give, lose, twice };

struct ProblemTemplate {
  int id = 0;
  std::vector<StepKind> steps;
};

// Every ordered sequence of 2 to 4 steps over the five step kinds, ordered
// by length and then lexicographically.
const std::vector<ProblemTemplate>& problem_templates();

struct ProblemSpec {
  std::vector<StepKind> steps;
  std::string subject;
  std::string other;  // recipient for "gives"
  std::string item;
  std::int64_t start = 0;
  std::vector<std::int64_t> operands;  // one per step; ignored for twice
};

struct Problem {
  std::uint64_t id = 0;
  int template_id = -1;
  std::string question;  // English, space-separated tokens
  std::string answer;    // English chain of thought ending "The answer is <gold> ."
  Rational gold;
};

// Renders a fully specified problem; the gold value is computed exactly while
// rendering. Throws DataError if a step would go non-positive.
Problem render_problem(const ProblemSpec& spec);
// Ranges for drawn numbers. Intermediate values never exceed max_value.
struct NumberLimits {
  std::int64_t max_start = 20;  // start value drawn from [2, max_start]
  std::int64_t max_operand = 9;  // step operands drawn from [1, max_operand]
  std::int64_t max_value = 99;

  friend bool operator==(const NumberLimits&, const NumberLimits&) = default;
};

// Draws names, item and numbers for the template.
Problem gen_problem(std::mt19937_64& rng, const ProblemTemplate& tmpl, const NumberLimits& limits = {});

enum class TaskKind { translation, reasoning };
enum class Split { train, test_in_domain, test_out_of_domain };
std::string_view to_string(TaskKind t);
std::string_view to_string(Split s);

struct Sample {
  std::string id;
  std::string lang;
  TaskKind task = TaskKind::reasoning;
  std::string prompt;
  std::string target;
  std::optional<Rational> gold;
  Split split = Split::train;

  // Problem id shared by every rendering of the same question.
  std::string problem_id() const;
};

std::string to_jsonl_line(const Sample& s);
Sample sample_from_jsonl_line(std::string_view line);
void write_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_jsonl(const std::filesystem::path& path);

struct LanguageSpec {
  std::string tag;
  OrderRule order = OrderRule::identity;
  bool low_resource = false;
};

// English plus nine toy languages; the last three are low-resource.
std::vector<LanguageSpec> default_languages();

struct CorpusConfig {
  int n_train = 5000;        // English reasoning problems
  int n_translation = 5000;  // X->English pairs per non-English language
  // English->English pairs appended to the base training set, so the base
  // model already follows the translation prompt.
  int n_english_translation = 0;
  int n_test = 250;          // problems per test split, rendered in every language
  int low_resource_divisor = 5;
  double ood_template_fraction = 0.2;
  int min_steps = 2;  // template lengths used, within [2, 4]
  int max_steps = 4;
  NumberLimits numbers;
  std::uint64_t seed = 1234;
  std::vector<LanguageSpec> languages = default_languages();
};

struct Corpus {
  std::vector<ToyLanguage> languages;  // English first
  std::vector<LanguageSpec> specs;
  Tokenizer tokenizer;
  std::vector<Sample> reasoning_train;
  std::vector<Sample> translation_train;
  std::vector<Sample> test_in_domain;
  std::vector<Sample> test_out_of_domain;
  std::set<int> in_domain_templates;
  std::set<int> ood_templates;
  // Template used by every problem id.
  std::map<std::string, int> problem_templates;
};

// Throws ConfigError for invalid sizes or language lists, DataError when the
// problem space cannot supply enough distinct questions.
Corpus build_datasets(const CorpusConfig& config);

// Language objects and tokenizer only; deterministic in the config.
std::vector<ToyLanguage> build_languages(const CorpusConfig& config);
Tokenizer build_tokenizer(const std::vector<ToyLanguage>& languages);

// [BOS] prompt target [EOS] with the loss mask on target tokens and EOS.
TrainingExample encode_for_training(const Tokenizer& tok, const Sample& s);
// [BOS] prompt, as fed to generation and profiling.
std::vector<TokenId> encode_prompt(const Tokenizer& tok, const Sample& s);

}  // namespace slam
