// SPDX-License-Identifier: Apache-2.0
//
// Layer scoring by the spread of activation ratios across languages, layer
// selection against the mean score, and expansion into trainable parameters.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slam/model.hpp"
#include "slam/profiler.hpp"

namespace slam {

// Mean squared deviation of `ratios` around their mean. Throws SelectionError
// for fewer than two languages.
double msd(std::span<const double> ratios);
// Over every language of the profile, English included.
double msd(const ActivationProfile& p, int layer);

// Arithmetic mean. Throws SelectionError when empty.
double theta(std::span<const double> msds);

struct SelectionResult {
  std::vector<int> K;
  std::map<int, double> msd_per_layer;  // keys are exactly K
  double theta = 0.0;
  std::vector<int> selected;  // {i in K : msd_i > theta}, ascending

  // No layer passed the threshold; callers must not train on this.
  bool empty() const { return selected.empty(); }
};

// Selection from precomputed scores; K is the key set.
SelectionResult select_from_scores(const std::map<int, double>& msd_per_layer);
// K from the overlap curve, scores from the profile.
SelectionResult select_layers(const ActivationProfile& p,
                              OverlapMode mode = OverlapMode::english_share);

enum class PolicyKind { ffn_up_down, ffn_all, attention_only, attention_and_ffn, all_layers, random_layers };

struct Policy {
  PolicyKind kind = PolicyKind::ffn_up_down;
  std::uint64_t seed = 0;  // random_layers only
  int count = 0;           // random_layers only

  // "ffn_up_down", "ffn_all", "attention_only", "attention_and_ffn",
  // "all_layers" or "random:K". Throws ConfigError.
  static Policy parse(std::string_view text, std::uint64_t seed = 0);
  std::string to_string() const;
};

struct TrainPlan {
  Policy policy;
  std::vector<int> layers;          // ascending
  std::vector<ParamRef> trainable;  // registry order
};

// Layers are validated against the config. random_layers ignores `layers`
// and draws `count` distinct layers from `seed`; all_layers ignores `layers`
// and trains every parameter. Throws SelectionError on an empty expansion.
TrainPlan build_train_plan(const ModelConfig& config, std::span<const int> layers, const Policy& policy);
TrainPlan build_train_plan(const ModelConfig& config, const SelectionResult& selection, const Policy& policy);

ParamFractionReport count_parameters(const ModelConfig& config, const TrainPlan& plan);

// "1..6", "1,3,5", "2..3,7". Throws ConfigError.
std::vector<int> parse_layer_spec(std::string_view spec);

void save_selection(const std::filesystem::path& path, const SelectionResult& s, const TrainPlan* plan,
                    const ModelConfig* config);
SelectionResult load_selection(const std::filesystem::path& path);

}  // namespace slam
