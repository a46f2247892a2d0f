// SPDX-License-Identifier: Apache-2.0
//
// Per-language FFN neuron activation statistics. Counts are kept as
// integers so accumulation order never changes a profile.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slam/model.hpp"

namespace slam {

class ActivationProfile {
 public:
  ActivationProfile() = default;
  // `languages` must contain "en" and no duplicates; tau lies in [0, 1).
  ActivationProfile(int n_layers, int d_inter, std::vector<std::string> languages,
                    double tau = 0.5);

  int n_layers() const { return n_layers_; }
  int d_inter() const { return d_inter_; }
  double tau() const { return tau_; }
  void set_tau(double tau);
  const std::vector<std::string>& languages() const { return languages_; }
  // Index into languages(); throws DataError for an unknown tag.
  std::size_t language_index(std::string_view lang) const;

  // Adds every position of `trace` whose `include` entry is non-zero (all
  // positions when `include` is empty).
  void accumulate(std::string_view lang, const ActivationTrace& trace,
                  std::span<const std::uint8_t> include = {});
  // Adds raw counts for one (layer, language): `tokens` observed positions
  // of which active[j] had neuron j activated.
  void add_counts(int layer, std::string_view lang, std::uint64_t tokens,
                  std::span<const std::uint64_t> active);
  // Adds another profile's counts; shapes and language lists must match.
  void merge(const ActivationProfile& other);

  std::uint64_t token_count(int layer, std::string_view lang) const;
  std::uint64_t active_count(int layer, std::string_view lang, int neuron) const;
  double freq(int layer, std::string_view lang, int neuron) const;

  friend bool operator==(const ActivationProfile&, const ActivationProfile&) = default;

 private:
  std::size_t slot(int layer, std::size_t lang) const {
    return static_cast<std::size_t>(layer - 1) * languages_.size() + lang;
  }
  void check_layer(int layer) const;

  int n_layers_ = 0;
  int d_inter_ = 0;
  double tau_ = 0.5;
  std::vector<std::string> languages_;
  std::vector<std::uint64_t> tokens_;  // [layer][lang]
  std::vector<std::uint64_t> counts_;  // [layer][lang][neuron]
};

// {j : freq_j > tau}, ascending. Throws DataError if no tokens were observed.
std::vector<int> activated_set(const ActivationProfile& p, int layer, std::string_view lang);
// |activated_set| / d_inter.
double activation_ratio(const ActivationProfile& p, int layer, std::string_view lang);

enum class OverlapMode { english_share, jaccard };

// english_share: |S ∩ E| / |E|. jaccard: |S ∩ E| / |S ∪ E|. Inputs are
// ascending index sets. Throws UndefinedError when the denominator is zero.
double set_overlap(std::span<const int> lang_set, std::span<const int> english_set,
                   OverlapMode mode = OverlapMode::english_share);
double overlap_ratio(const ActivationProfile& p, int layer, std::string_view lang,
                     OverlapMode mode = OverlapMode::english_share);

struct OverlapCurve {
  std::vector<std::string> languages;    // non-English, profile order
  std::vector<std::vector<double>> per;  // [layer - 1][language]
  std::vector<double> avg;               // [layer - 1]
};

OverlapCurve overlap_curve(const ActivationProfile& p,
                           OverlapMode mode = OverlapMode::english_share);

// Layers before the first maximum of `avg` (1-based layer numbers).
std::vector<int> language_specific_layers(std::span<const double> avg);
inline std::vector<int> language_specific_layers(const OverlapCurve& c) {
  return language_specific_layers(c.avg);
}

// Prompts per language, fed through the model one at a time. Special tokens
// are excluded from the counts.
ActivationProfile profile_model(const Model& model,
                                const std::map<std::string, std::vector<std::vector<TokenId>>>& prompts,
                                double tau = 0.5);

void save_profile(const std::filesystem::path& path, const ActivationProfile& p);
ActivationProfile load_profile(const std::filesystem::path& path);
// Rows `layer,lang,R,overlap`; English rows carry an empty overlap field.
void write_profile_csv(const std::filesystem::path& path, const ActivationProfile& p,
                       OverlapMode mode = OverlapMode::english_share);

}  // namespace slam
