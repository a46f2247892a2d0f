// SPDX-License-Identifier: Apache-2.0

#include "slam/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "slam/error.hpp"

namespace slam {
namespace {

constexpr std::array<std::string_view, 10> kNames = {"Tom", "Ann", "Bob", "Sue", "Max",
                                                     "Eva", "Leo", "Mia", "Sam", "Kim"};
constexpr std::array<std::string_view, 10> kItems = {"apples", "pens",  "books",  "coins",
                                                     "cards",  "eggs",  "cups",   "shells",
                                                     "stamps", "rocks"};
constexpr std::array<std::string_view, 18> kFunctionWords = {
    "has", "buys", "finds", "more", "gives", "to",  "loses", "doubles", "the",
    "How", "many", "does",  "have", "now",   "so",  "The",   "answer",  "is"};

// Shared across languages, never translated.
constexpr std::array<std::string_view, 13> kSymbols = {".", ",", "?", ":", "[", "]", "#",
                                                       "'", "+", "-", "*", "=", "\n"};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> split_spaces(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

bool is_terminator(const std::string& w) { return w == "." || w == "?"; }

// Permutes the words of one sentence (terminator excluded).
void reorder(std::vector<std::string>& words, OrderRule rule, bool inverse) {
  switch (rule) {
    case OrderRule::identity: return;
    case OrderRule::reversal: std::reverse(words.begin(), words.end()); return;
    case OrderRule::svo_to_sov:
      if (words.size() < 3) return;
      if (!inverse) {
        std::rotate(words.begin() + 1, words.begin() + 2, words.end());
      } else {
        std::rotate(words.begin() + 1, words.end() - 1, words.end());
      }
      return;
  }
}

std::string transform(std::string_view text, const std::map<std::string, std::string>& map,
                      OrderRule rule, bool inverse) {
  std::vector<std::string> out;
  std::vector<std::string> sentence;
  auto flush = [&](const std::string* terminator) {
    // Forward: map words, then reorder. Inverse: undo the order, then map.
    if (inverse) reorder(sentence, rule, true);
    for (auto& w : sentence) {
      auto it = map.find(w);
      if (it != map.end()) w = it->second;
    }
    if (!inverse) reorder(sentence, rule, false);
    out.insert(out.end(), sentence.begin(), sentence.end());
    if (terminator) out.push_back(*terminator);
    sentence.clear();
  };
  for (const std::string& w : split_spaces(text)) {
    if (is_terminator(w)) {
      flush(&w);
    } else {
      sentence.push_back(w);
    }
  }
  if (!sentence.empty()) flush(nullptr);
  return join(out);
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos;
       pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string step_question(StepKind k, const ProblemSpec& p, std::int64_t operand) {
  const std::string b = std::to_string(operand);
  switch (k) {
    case StepKind::buy: return p.subject + " buys " + b + " more " + p.item + " .";
    case StepKind::find: return p.subject + " finds " + b + " more " + p.item + " .";
    case StepKind::give: return p.subject + " gives " + b + " " + p.item + " to " + p.other + " .";
    case StepKind::lose: return p.subject + " loses " + b + " " + p.item + " .";
    case StepKind::twice: return p.subject + " doubles the " + p.item + " .";
  }
  return {};
}

}  // namespace

std::string render_inference_prompt(std::string_view query) {
  return replace_all(std::string(kInferenceTemplate), "{query}", query);
}

std::string render_translation_prompt(std::string_view source_lang, std::string_view source) {
  std::string s = replace_all(std::string(kTranslationTemplate), "{source_lang}", source_lang);
  return replace_all(std::move(s), "{source}", source);
}

std::string_view to_string(OrderRule r) {
  switch (r) {
    case OrderRule::identity: return "identity";
    case OrderRule::svo_to_sov: return "svo_to_sov";
    case OrderRule::reversal: return "reversal";
  }
  return "identity";
}

OrderRule order_rule_from_string(std::string_view s) {
  if (s == "identity") return OrderRule::identity;
  if (s == "svo_to_sov") return OrderRule::svo_to_sov;
  if (s == "reversal") return OrderRule::reversal;
  throw ConfigError("unknown order rule '" + std::string(s) + "'");
}

const std::vector<std::string>& english_lexicon() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w;
    for (auto s : kNames) w.emplace_back(s);
    for (auto s : kItems) w.emplace_back(s);
    for (auto s : kFunctionWords) w.emplace_back(s);
    return w;
  }();
  return words;
}

ToyLanguage ToyLanguage::english() {
  ToyLanguage l;
  l.tag_ = std::string(kEnglishTag);
  l.display_name_ = "English";
  for (const auto& w : english_lexicon()) {
    l.to_foreign_[w] = w;
    l.to_english_[w] = w;
  }
  return l;
}

std::vector<std::string> ToyLanguage::surface_words() const {
  std::vector<std::string> out;
  for (const auto& w : english_lexicon()) out.push_back(to_foreign_.at(w));
  return out;
}

std::string ToyLanguage::encode(std::string_view english_text) const {
  return transform(english_text, to_foreign_, order_, false);
}

std::string ToyLanguage::decode(std::string_view foreign_text) const {
  return transform(foreign_text, to_english_, order_, true);
}

ToyLanguage make_language(std::uint64_t seed, std::string tag, OrderRule order) {
  if (tag.size() != 2 || !std::islower(static_cast<unsigned char>(tag[0])) ||
      !std::islower(static_cast<unsigned char>(tag[1])) || tag == kEnglishTag) {
    throw ConfigError("language tag '" + tag + "' must be two lowercase letters other than 'en'");
  }
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  ToyLanguage l;
  l.tag_ = tag;
  l.display_name_ = tag;
  l.display_name_[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(tag[0])));
  l.order_ = order;
  l.seed_ = seed;
  std::mt19937_64 rng(mix(seed ^ hash_string(tag)));
  std::unordered_set<std::string> used;
  for (const auto& w : english_lexicon()) {
    std::string word;
    do {
      word.clear();
      const int syllables = 2 + static_cast<int>(rng() % 2);
      for (int s = 0; s < syllables; ++s) {
        word += kConsonants[rng() % kConsonants.size()];
        word += kVowels[rng() % kVowels.size()];
      }
      word += tag;
    } while (!used.insert(word).second);
    l.to_foreign_[w] = word;
    l.to_english_[word] = w;
  }
  return l;
}

const ToyLanguage& LanguageRegistry::add(std::uint64_t seed, std::string tag, OrderRule order) {
  for (const auto& l : languages_) {
    if (l.tag() == tag) throw ConfigError("duplicate language tag '" + tag + "'");
  }
  languages_.push_back(make_language(seed, std::move(tag), order));
  return languages_.back();
}

const std::vector<ProblemTemplate>& problem_templates() {
  static const std::vector<ProblemTemplate> all = [] {
    std::vector<ProblemTemplate> t;
    constexpr int kKinds = 5;
    for (int len = 2; len <= 4; ++len) {
      int total = 1;
      for (int i = 0; i < len; ++i) total *= kKinds;
      for (int code = 0; code < total; ++code) {
        ProblemTemplate p;
        p.id = static_cast<int>(t.size());
        int c = code;
        for (int i = 0; i < len; ++i) {
          p.steps.push_back(static_cast<StepKind>(c % kKinds));
          c /= kKinds;
        }
        std::reverse(p.steps.begin(), p.steps.end());
        t.push_back(std::move(p));
      }
    }
    return t;
  }();
  return all;
}

Problem render_problem(const ProblemSpec& p) {
  if (p.operands.size() != p.steps.size()) {
    throw DataError("render_problem: one operand per step required");
  }
  if (p.start <= 0) throw DataError("render_problem: start value must be positive");
  std::string q = p.subject + " has " + std::to_string(p.start) + " " + p.item + " .";
  std::string a = q;
  std::int64_t x = p.start;
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const StepKind k = p.steps[i];
    const std::int64_t b = p.operands[i];
    std::int64_t y = 0;
    std::string eq;
    switch (k) {
      case StepKind::buy:
      case StepKind::find:
        y = x + b;
        eq = std::to_string(x) + " + " + std::to_string(b);
        break;
      case StepKind::give:
      case StepKind::lose:
        y = x - b;
        eq = std::to_string(x) + " - " + std::to_string(b);
        break;
      case StepKind::twice:
        y = x * 2;
        eq = std::to_string(x) + " * 2";
        break;
    }
    if (y <= 0) throw DataError("render_problem: value drops to " + std::to_string(y));
    const std::string sentence = step_question(k, p, b);
    q += " " + sentence;
    a += " " + sentence.substr(0, sentence.size() - 2) + " , so " + eq + " = " +
         std::to_string(y) + " .";
    x = y;
  }
  q += " How many " + p.item + " does " + p.subject + " have now ?";
  a += " The answer is " + std::to_string(x) + " .";
  Problem out;
  out.question = std::move(q);
  out.answer = std::move(a);
  out.gold = Rational(x);
  return out;
}

Problem gen_problem(std::mt19937_64& rng, const ProblemTemplate& tmpl, const NumberLimits& limits) {
  if (limits.max_start < 2 || limits.max_operand < 1 || limits.max_value < limits.max_start) {
    throw ConfigError("number limits need max_start >= 2, max_operand >= 1, max_value >= max_start");
  }
  auto pick = [&](std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  for (;;) {
    ProblemSpec spec;
    spec.steps = tmpl.steps;
    const auto s = static_cast<std::size_t>(pick(0, kNames.size() - 1));
    auto o = static_cast<std::size_t>(pick(0, kNames.size() - 2));
    if (o >= s) ++o;
    spec.subject = kNames[s];
    spec.other = kNames[o];
    spec.item = kItems[static_cast<std::size_t>(pick(0, kItems.size() - 1))];
    spec.start = pick(2, limits.max_start);
    std::int64_t x = spec.start;
    bool ok = true;
    for (StepKind k : spec.steps) {
      std::int64_t b = 0;
      switch (k) {
        case StepKind::buy:
        case StepKind::find:
          b = pick(1, limits.max_operand);
          x += b;
          break;
        case StepKind::give:
        case StepKind::lose:
          if (x < 2) {
            ok = false;
            break;
          }
          b = pick(1, std::min(limits.max_operand, x - 1));
          x -= b;
          break;
        case StepKind::twice: x *= 2; break;
      }
      if (!ok || x > limits.max_value) {
        ok = false;
        break;
      }
      spec.operands.push_back(b);
    }
    if (!ok) continue;
    Problem p = render_problem(spec);
    p.template_id = tmpl.id;
    return p;
  }
}

std::string_view to_string(TaskKind t) {
  return t == TaskKind::translation ? "translation" : "reasoning";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_in_domain: return "test_in_domain";
    case Split::test_out_of_domain: return "test_out_of_domain";
  }
  return "train";
}

std::string Sample::problem_id() const {
  const auto colon = id.find(':');
  return colon == std::string::npos ? id : id.substr(0, colon);
}

std::string to_jsonl_line(const Sample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["lang"] = s.lang;
  j["task"] = std::string(to_string(s.task));
  j["prompt"] = s.prompt;
  j["target"] = s.target;
  j["gold"] = s.gold ? nlohmann::ordered_json(s.gold->to_string()) : nlohmann::ordered_json();
  j["split"] = std::string(to_string(s.split));
  return j.dump();
}

Sample sample_from_jsonl_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed JSONL line: ") + e.what());
  }
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.lang = j.at("lang").get<std::string>();
    const auto task = j.at("task").get<std::string>();
    if (task == "translation") {
      s.task = TaskKind::translation;
    } else if (task == "reasoning") {
      s.task = TaskKind::reasoning;
    } else {
      throw DataError("unknown task '" + task + "'");
    }
    s.prompt = j.at("prompt").get<std::string>();
    s.target = j.at("target").get<std::string>();
    if (!j.at("gold").is_null()) {
      s.gold = Rational::parse(j.at("gold").get<std::string>());
      if (!s.gold) throw DataError("unparseable gold '" + j.at("gold").get<std::string>() + "'");
    }
    const auto split = j.at("split").get<std::string>();
    if (split == "train") {
      s.split = Split::train;
    } else if (split == "test_in_domain") {
      s.split = Split::test_in_domain;
    } else if (split == "test_out_of_domain") {
      s.split = Split::test_out_of_domain;
    } else {
      throw DataError("unknown split '" + split + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("JSONL record missing a field: ") + e.what());
  }
  if (s.task == TaskKind::reasoning && !s.gold) {
    throw DataError("reasoning sample " + s.id + " has no gold answer");
  }
  return s;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const Sample& s : samples) out << to_jsonl_line(s) << '\n';
}

std::vector<Sample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(sample_from_jsonl_line(line));
  }
  return out;
}

std::vector<LanguageSpec> default_languages() {
  return {
      {"en", OrderRule::identity, false},   {"xa", OrderRule::identity, false},
      {"xb", OrderRule::identity, false},   {"xc", OrderRule::svo_to_sov, false},
      {"xd", OrderRule::identity, false},   {"xe", OrderRule::reversal, false},
      {"xf", OrderRule::identity, false},   {"xg", OrderRule::identity, true},
      {"xh", OrderRule::svo_to_sov, true},  {"xi", OrderRule::identity, true},
  };
}

std::vector<ToyLanguage> build_languages(const CorpusConfig& config) {
  if (config.languages.size() < 2) {
    throw ConfigError("corpus needs at least two languages including English");
  }
  if (config.languages.front().tag != kEnglishTag) {
    throw ConfigError("the first corpus language must be English ('en')");
  }
  std::vector<ToyLanguage> out = {ToyLanguage::english()};
  LanguageRegistry registry;
  for (std::size_t i = 1; i < config.languages.size(); ++i) {
    const LanguageSpec& s = config.languages[i];
    registry.add(mix(config.seed + i), s.tag, s.order);
  }
  out.insert(out.end(), registry.languages().begin(), registry.languages().end());
  return out;
}

Tokenizer build_tokenizer(const std::vector<ToyLanguage>& languages) {
  std::vector<std::string> words;
  for (auto s : kSymbols) words.emplace_back(s);
  for (char d = '0'; d <= '9'; ++d) words.emplace_back(1, d);
  for (std::string_view tmpl : {kInferenceTemplate, kTranslationTemplate}) {
    std::string t(tmpl);
    for (auto ph : {"{query}", "{source_lang}", "{source}"}) t = replace_all(t, ph, " ");
    for (auto& w : Tokenizer::split(t)) words.push_back(std::move(w));
  }
  for (const auto& l : languages) words.push_back(l.display_name());
  for (const auto& w : english_lexicon()) words.push_back(w);
  for (const auto& l : languages) {
    if (l.is_english()) continue;
    for (auto& w : l.surface_words()) words.push_back(std::move(w));
  }
  return Tokenizer(words);
}

Corpus build_datasets(const CorpusConfig& config) {
  if (config.n_train < 1) throw ConfigError("n_train must be >= 1");
  if (config.n_test < 1) throw ConfigError("n_test must be >= 1");
  if (config.n_translation < 0) throw ConfigError("n_translation must be >= 0");
  if (config.n_english_translation < 0) throw ConfigError("n_english_translation must be >= 0");
  if (config.low_resource_divisor < 1) throw ConfigError("low_resource_divisor must be >= 1");
  if (config.min_steps < 2 || config.max_steps > 4 || config.min_steps > config.max_steps) {
    throw ConfigError("step range must satisfy 2 <= min_steps <= max_steps <= 4");
  }
  if (!(config.ood_template_fraction > 0.0 && config.ood_template_fraction < 1.0)) {
    throw ConfigError("ood_template_fraction must lie in (0, 1)");
  }
  if (config.numbers.max_value > 9999) throw ConfigError("numbers.max_value must stay within four digits");

  Corpus c;
  c.specs = config.languages;
  c.languages = build_languages(config);
  c.tokenizer = build_tokenizer(c.languages);

  const auto& templates = problem_templates();
  std::vector<int> order;
  for (const auto& t : templates) {
    const auto len = static_cast<int>(t.steps.size());
    if (len >= config.min_steps && len <= config.max_steps) order.push_back(t.id);
  }
  std::mt19937_64 template_rng(mix(config.seed ^ 0x7e3a1ULL));
  std::shuffle(order.begin(), order.end(), template_rng);
  const auto n_ood = std::max<std::size_t>(
      1, static_cast<std::size_t>(config.ood_template_fraction * static_cast<double>(order.size()) + 0.5));
  std::vector<int> in_domain;
  std::vector<int> ood;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_ood ? ood : in_domain).push_back(order[i]);
  }
  std::sort(in_domain.begin(), in_domain.end());
  std::sort(ood.begin(), ood.end());
  c.in_domain_templates = {in_domain.begin(), in_domain.end()};
  c.ood_templates = {ood.begin(), ood.end()};

  std::mt19937_64 rng(mix(config.seed));
  std::unordered_set<std::string> seen;
  std::uint64_t next_id = 0;
  auto draw = [&](const std::vector<int>& pool, int count, const char* what) {
    std::vector<Problem> out;
    const std::int64_t max_attempts = static_cast<std::int64_t>(count) * 50 + 1000;
    std::int64_t attempts = 0;
    while (static_cast<int>(out.size()) < count) {
      if (++attempts > max_attempts) {
        throw DataError(std::string("cannot draw ") + std::to_string(count) +
                        " distinct problems for the " + what + " split");
      }
      const auto& tmpl = templates[static_cast<std::size_t>(pool[rng() % pool.size()])];
      Problem p = gen_problem(rng, tmpl, config.numbers);
      if (!seen.insert(p.question).second) continue;
      p.id = next_id++;
      out.push_back(std::move(p));
    }
    return out;
  };
  const auto train = draw(in_domain, config.n_train, "train");
  const auto test_in = draw(in_domain, config.n_test, "in-domain test");
  const auto test_ood = draw(ood, config.n_test, "out-of-domain test");

  auto pid = [](const Problem& p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%06llu", static_cast<unsigned long long>(p.id));
    return std::string(buf);
  };
  for (const auto* set : {&train, &test_in, &test_ood}) {
    for (const auto& p : *set) c.problem_templates[pid(p)] = p.template_id;
  }

  const ToyLanguage& en = c.languages.front();
  for (const Problem& p : train) {
    Sample s;
    s.id = pid(p);
    s.lang = en.tag();
    s.task = TaskKind::reasoning;
    s.prompt = render_inference_prompt(p.question);
    s.target = p.answer;
    s.gold = p.gold;
    s.split = Split::train;
    c.reasoning_train.push_back(std::move(s));
  }
  for (int k = 0; k < config.n_english_translation; ++k) {
    const Problem& p = train[static_cast<std::size_t>(k / 2) % train.size()];
    const bool question = k % 2 == 0;
    const std::string& english = question ? p.question : p.answer;
    Sample s;
    s.id = pid(p) + (question ? ":q" : ":a");
    s.lang = en.tag();
    s.task = TaskKind::translation;
    s.prompt = render_translation_prompt(en.display_name(), english);
    s.target = english;
    s.split = Split::train;
    c.reasoning_train.push_back(std::move(s));
  }

  for (std::size_t li = 1; li < c.languages.size(); ++li) {
    const ToyLanguage& lang = c.languages[li];
    const int count = config.languages[li].low_resource
                          ? config.n_translation / config.low_resource_divisor
                          : config.n_translation;
    const std::size_t offset = (li - 1) * 7919;
    for (int k = 0; k < count; ++k) {
      const Problem& p = train[(static_cast<std::size_t>(k / 2) + offset) % train.size()];
      const bool question = k % 2 == 0;
      const std::string& english = question ? p.question : p.answer;
      Sample s;
      s.id = pid(p) + (question ? ":q" : ":a");
      s.lang = lang.tag();
      s.task = TaskKind::translation;
      s.prompt = render_translation_prompt(lang.display_name(), lang.encode(english));
      s.target = english;
      s.split = Split::train;
      c.translation_train.push_back(std::move(s));
    }
  }

  auto render_tests = [&](const std::vector<Problem>& problems, Split split,
                          std::vector<Sample>& out) {
    for (const ToyLanguage& lang : c.languages) {
      for (const Problem& p : problems) {
        Sample s;
        s.id = pid(p);
        s.lang = lang.tag();
        s.task = TaskKind::reasoning;
        s.prompt = render_inference_prompt(lang.encode(p.question));
        s.target = lang.encode(p.answer);
        s.gold = p.gold;
        s.split = split;
        out.push_back(std::move(s));
      }
    }
  };
  render_tests(test_in, Split::test_in_domain, c.test_in_domain);
  render_tests(test_ood, Split::test_out_of_domain, c.test_out_of_domain);
  return c;
}

TrainingExample encode_for_training(const Tokenizer& tok, const Sample& s) {
  TrainingExample ex;
  ex.tokens.push_back(Tokenizer::kBos);
  for (TokenId t : tok.encode(s.prompt)) ex.tokens.push_back(t);
  const std::size_t prompt_len = ex.tokens.size();
  for (TokenId t : tok.encode(s.target)) ex.tokens.push_back(t);
  ex.tokens.push_back(Tokenizer::kEos);
  ex.mask.assign(ex.tokens.size(), 0);
  for (std::size_t i = prompt_len; i < ex.tokens.size(); ++i) ex.mask[i] = 1;
  return ex;
}

std::vector<TokenId> encode_prompt(const Tokenizer& tok, const Sample& s) {
  std::vector<TokenId> ids = {Tokenizer::kBos};
  for (TokenId t : tok.encode(s.prompt)) ids.push_back(t);
  return ids;
}

}  // namespace slam
