// SPDX-License-Identifier: Apache-2.0

#include "slam/profiler.hpp"

#include <algorithm>
#include <future>
#include <sstream>
#include <thread>

#include "json_io.hpp"
#include "slam/corpus.hpp"
#include "slam/error.hpp"
#include "slam/tokenizer.hpp"

namespace slam {

ActivationProfile::ActivationProfile(int n_layers, int d_inter, std::vector<std::string> languages,
                                     double tau)
    : n_layers_(n_layers), d_inter_(d_inter), languages_(std::move(languages)) {
  if (n_layers < 1 || d_inter < 1) throw ConfigError("profile needs n_layers >= 1 and d_inter >= 1");
  if (std::find(languages_.begin(), languages_.end(), kEnglishTag) == languages_.end()) {
    throw ConfigError("profile languages must include English ('en')");
  }
  for (std::size_t i = 0; i < languages_.size(); ++i) {
    for (std::size_t k = i + 1; k < languages_.size(); ++k) {
      if (languages_[i] == languages_[k]) throw ConfigError("duplicate language '" + languages_[i] + "'");
    }
  }
  set_tau(tau);
  tokens_.assign(static_cast<std::size_t>(n_layers) * languages_.size(), 0);
  counts_.assign(tokens_.size() * static_cast<std::size_t>(d_inter), 0);
}

void ActivationProfile::set_tau(double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must lie in [0, 1)");
  tau_ = tau;
}

std::size_t ActivationProfile::language_index(std::string_view lang) const {
  const auto it = std::find(languages_.begin(), languages_.end(), lang);
  if (it == languages_.end()) throw DataError("unknown language '" + std::string(lang) + "'");
  return static_cast<std::size_t>(it - languages_.begin());
}

void ActivationProfile::check_layer(int layer) const {
  if (layer < 1 || layer > n_layers_) {
    throw DataError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(n_layers_));
  }
}

void ActivationProfile::accumulate(std::string_view lang, const ActivationTrace& trace,
                                   std::span<const std::uint8_t> include) {
  const std::size_t li = language_index(lang);
  if (trace.n_layers() != n_layers_ || trace.d_inter() != d_inter_) {
    throw ShapeError("trace shape does not match the profile");
  }
  if (!include.empty() && include.size() != trace.n_tokens()) {
    throw ShapeError("include mask length does not match the trace");
  }
  for (int layer = 1; layer <= n_layers_; ++layer) {
    const std::size_t s = slot(layer, li);
    std::uint64_t* counts = counts_.data() + s * static_cast<std::size_t>(d_inter_);
    for (std::size_t pos = 0; pos < trace.n_tokens(); ++pos) {
      if (!include.empty() && include[pos] == 0) continue;
      ++tokens_[s];
      const auto row = trace.row(layer, pos);
      for (int j = 0; j < d_inter_; ++j) counts[j] += row[static_cast<std::size_t>(j)];
    }
  }
}

void ActivationProfile::add_counts(int layer, std::string_view lang, std::uint64_t tokens,
                                   std::span<const std::uint64_t> active) {
  check_layer(layer);
  const std::size_t s = slot(layer, language_index(lang));
  if (active.size() != static_cast<std::size_t>(d_inter_)) throw ShapeError("count vector width mismatch");
  for (std::size_t j = 0; j < active.size(); ++j) {
    if (active[j] > tokens) throw DataError("active count exceeds token count");
  }
  tokens_[s] += tokens;
  for (std::size_t j = 0; j < active.size(); ++j) counts_[s * active.size() + j] += active[j];
}

void ActivationProfile::merge(const ActivationProfile& other) {
  if (other.n_layers_ != n_layers_ || other.d_inter_ != d_inter_ || other.languages_ != languages_) {
    throw ShapeError("cannot merge profiles of different shape or language list");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) tokens_[i] += other.tokens_[i];
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ActivationProfile::token_count(int layer, std::string_view lang) const {
  check_layer(layer);
  return tokens_[slot(layer, language_index(lang))];
}

std::uint64_t ActivationProfile::active_count(int layer, std::string_view lang, int neuron) const {
  check_layer(layer);
  if (neuron < 0 || neuron >= d_inter_) throw DataError("neuron index out of range");
  return counts_[slot(layer, language_index(lang)) * static_cast<std::size_t>(d_inter_) +
                 static_cast<std::size_t>(neuron)];
}

double ActivationProfile::freq(int layer, std::string_view lang, int neuron) const {
  const std::uint64_t n = token_count(layer, lang);
  if (n == 0) throw DataError("no tokens observed for '" + std::string(lang) + "' at layer " + std::to_string(layer));
  return static_cast<double>(active_count(layer, lang, neuron)) / static_cast<double>(n);
}

std::vector<int> activated_set(const ActivationProfile& p, int layer, std::string_view lang) {
  std::vector<int> out;
  for (int j = 0; j < p.d_inter(); ++j) {
    if (p.freq(layer, lang, j) > p.tau()) out.push_back(j);
  }
  return out;
}

double activation_ratio(const ActivationProfile& p, int layer, std::string_view lang) {
  return static_cast<double>(activated_set(p, layer, lang).size()) / p.d_inter();
}

double set_overlap(std::span<const int> lang_set, std::span<const int> english_set, OverlapMode mode) {
  std::size_t inter = 0;
  for (auto a = lang_set.begin(), b = english_set.begin(); a != lang_set.end() && b != english_set.end();) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++inter;
      ++a;
      ++b;
    }
  }
  const std::size_t denom =
      mode == OverlapMode::english_share ? english_set.size() : lang_set.size() + english_set.size() - inter;
  if (denom == 0) throw UndefinedError("overlap undefined: empty English activated set");
  return static_cast<double>(inter) / static_cast<double>(denom);
}

double overlap_ratio(const ActivationProfile& p, int layer, std::string_view lang, OverlapMode mode) {
  const auto s = activated_set(p, layer, lang);
  const auto e = activated_set(p, layer, kEnglishTag);
  if (e.empty()) {
    throw UndefinedError("overlap undefined: English activates no neuron at layer " + std::to_string(layer));
  }
  return set_overlap(s, e, mode);
}

OverlapCurve overlap_curve(const ActivationProfile& p, OverlapMode mode) {
  OverlapCurve c;
  for (const auto& l : p.languages()) {
    if (l != kEnglishTag) c.languages.push_back(l);
  }
  if (c.languages.empty()) throw DataError("overlap curve needs at least one non-English language");
  for (int layer = 1; layer <= p.n_layers(); ++layer) {
    std::vector<double> row;
    double sum = 0.0;
    for (const auto& l : c.languages) {
      row.push_back(overlap_ratio(p, layer, l, mode));
      sum += row.back();
    }
    c.avg.push_back(sum / static_cast<double>(row.size()));
    c.per.push_back(std::move(row));
  }
  return c;
}

std::vector<int> language_specific_layers(std::span<const double> avg) {
  if (avg.empty()) return {};
  const auto m = std::max_element(avg.begin(), avg.end()) - avg.begin();
  std::vector<int> k;
  for (int layer = 1; layer <= m; ++layer) k.push_back(layer);
  return k;
}

ActivationProfile profile_model(const Model& model,
                                const std::map<std::string, std::vector<std::vector<TokenId>>>& prompts,
                                double tau) {
  std::vector<std::string> langs;
  for (const auto& [lang, _] : prompts) langs.push_back(lang);
  std::stable_partition(langs.begin(), langs.end(), [](const std::string& l) { return l == kEnglishTag; });
  const ModelConfig& cfg = model.config();

  auto shard = [&](const std::string& lang) {
    ActivationProfile p(cfg.n_layers, cfg.d_inter, langs, tau);
    for (const auto& tokens : prompts.at(lang)) {
      const auto out = model.forward(tokens, true);
      std::vector<std::uint8_t> include(tokens.size());
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        include[i] = tokens[i] == Tokenizer::kPad || tokens[i] == Tokenizer::kBos ||
                             tokens[i] == Tokenizer::kEos
                         ? 0
                         : 1;
      }
      p.accumulate(lang, *out.trace, include);
    }
    return p;
  };

  ActivationProfile total(cfg.n_layers, cfg.d_inter, langs, tau);
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t start = 0; start < langs.size(); start += workers) {
    std::vector<std::future<ActivationProfile>> jobs;
    for (std::size_t i = start; i < std::min(langs.size(), start + workers); ++i) {
      jobs.push_back(std::async(std::launch::async, shard, langs[i]));
    }
    for (auto& j : jobs) total.merge(j.get());
  }
  return total;
}

void save_profile(const std::filesystem::path& path, const ActivationProfile& p) {
  nlohmann::json j;
  j["format"] = "slam-profile";
  j["tau"] = p.tau();
  j["n_layers"] = p.n_layers();
  j["d_inter"] = p.d_inter();
  j["languages"] = p.languages();
  nlohmann::json layers = nlohmann::json::array();
  for (int layer = 1; layer <= p.n_layers(); ++layer) {
    nlohmann::json per_lang = nlohmann::json::object();
    for (const auto& lang : p.languages()) {
      std::vector<std::uint64_t> counts(static_cast<std::size_t>(p.d_inter()));
      std::vector<double> freq(counts.size(), 0.0);
      const std::uint64_t n = p.token_count(layer, lang);
      for (int jn = 0; jn < p.d_inter(); ++jn) {
        counts[static_cast<std::size_t>(jn)] = p.active_count(layer, lang, jn);
        if (n > 0) freq[static_cast<std::size_t>(jn)] = static_cast<double>(counts[static_cast<std::size_t>(jn)]) / static_cast<double>(n);
      }
      per_lang[lang] = {{"tokens", n}, {"active_counts", counts}, {"freq", freq}};
    }
    layers.push_back({{"layer", layer}, {"languages", per_lang}});
  }
  j["layers"] = layers;
  write_json_file(path, j);
}

ActivationProfile load_profile(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    if (j.at("format") != "slam-profile") throw DataError(path.string() + " is not a profile file");
    ActivationProfile p(j.at("n_layers").get<int>(), j.at("d_inter").get<int>(),
                        j.at("languages").get<std::vector<std::string>>(), j.at("tau").get<double>());
    const auto& layers = j.at("layers");
    if (layers.size() != static_cast<std::size_t>(p.n_layers())) throw DataError("profile layer count mismatch");
    for (const auto& entry : layers) {
      const int layer = entry.at("layer").get<int>();
      for (const auto& lang : p.languages()) {
        const auto& rec = entry.at("languages").at(lang);
        const auto n = rec.at("tokens").get<std::uint64_t>();
        const auto counts = rec.at("active_counts").get<std::vector<std::uint64_t>>();
        if (counts.size() != static_cast<std::size_t>(p.d_inter())) throw DataError("profile width mismatch");
        p.add_counts(layer, lang, n, counts);
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed profile " + path.string() + ": " + e.what());
  }
}

void write_profile_csv(const std::filesystem::path& path, const ActivationProfile& p, OverlapMode mode) {
  std::ostringstream out;
  out.precision(17);
  out << "layer,lang,R,overlap\n";
  for (int layer = 1; layer <= p.n_layers(); ++layer) {
    for (const auto& lang : p.languages()) {
      out << layer << ',' << lang << ',' << activation_ratio(p, layer, lang) << ',';
      if (lang != kEnglishTag) out << overlap_ratio(p, layer, lang, mode);
      out << '\n';
    }
  }
  write_text_file(path, out.str());
}

}  // namespace slam
