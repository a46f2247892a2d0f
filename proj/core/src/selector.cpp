// SPDX-License-Identifier: Apache-2.0

#include "slam/selector.hpp"

#include <algorithm>
#include <charconv>
#include <random>
#include <set>

#include "json_io.hpp"
#include "slam/error.hpp"

namespace slam {

double msd(std::span<const double> ratios) {
  if (ratios.size() < 2) throw SelectionError("MSD needs at least two languages");
  double mu = 0.0;
  for (double r : ratios) mu += r;
  mu /= static_cast<double>(ratios.size());
  double residual = 0.0;
  for (double r : ratios) residual += r - mu;
  mu += residual / static_cast<double>(ratios.size());
  double acc = 0.0;
  for (double r : ratios) acc += (r - mu) * (r - mu);
  return acc / static_cast<double>(ratios.size());
}

double msd(const ActivationProfile& p, int layer) {
  std::vector<double> r;
  for (const auto& lang : p.languages()) r.push_back(activation_ratio(p, layer, lang));
  return msd(r);
}

double theta(std::span<const double> msds) {
  if (msds.empty()) throw SelectionError("no language-specific layers: threshold undefined");
  double sum = 0.0;
  for (double m : msds) sum += m;
  const double mean = sum / static_cast<double>(msds.size());
  double residual = 0.0;
  for (double m : msds) residual += m - mean;
  return mean + residual / static_cast<double>(msds.size());
}

SelectionResult select_from_scores(const std::map<int, double>& msd_per_layer) {
  SelectionResult s;
  s.msd_per_layer = msd_per_layer;
  std::vector<double> scores;
  for (const auto& [layer, m] : msd_per_layer) {
    s.K.push_back(layer);
    scores.push_back(m);
  }
  s.theta = theta(scores);
  for (const auto& [layer, m] : msd_per_layer) {
    if (m > s.theta) s.selected.push_back(layer);
  }
  return s;
}

SelectionResult select_layers(const ActivationProfile& p, OverlapMode mode) {
  const auto k = language_specific_layers(overlap_curve(p, mode));
  std::map<int, double> scores;
  for (int layer : k) scores[layer] = msd(p, layer);
  return select_from_scores(scores);
}

Policy Policy::parse(std::string_view text, std::uint64_t seed) {
  Policy p;
  p.seed = seed;
  if (text == "ffn_up_down") {
    p.kind = PolicyKind::ffn_up_down;
  } else if (text == "ffn_all") {
    p.kind = PolicyKind::ffn_all;
  } else if (text == "attention_only") {
    p.kind = PolicyKind::attention_only;
  } else if (text == "attention_and_ffn") {
    p.kind = PolicyKind::attention_and_ffn;
  } else if (text == "all_layers") {
    p.kind = PolicyKind::all_layers;
  } else if (text.starts_with("random:")) {
    p.kind = PolicyKind::random_layers;
    const auto n = text.substr(7);
    auto [ptr, ec] = std::from_chars(n.data(), n.data() + n.size(), p.count);
    if (ec != std::errc() || ptr != n.data() + n.size() || p.count < 1) {
      throw ConfigError("random policy needs a positive layer count, got '" + std::string(text) + "'");
    }
  } else {
    throw ConfigError("unknown policy '" + std::string(text) + "'");
  }
  return p;
}

std::string Policy::to_string() const {
  switch (kind) {
    case PolicyKind::ffn_up_down: return "ffn_up_down";
    case PolicyKind::ffn_all: return "ffn_all";
    case PolicyKind::attention_only: return "attention_only";
    case PolicyKind::attention_and_ffn: return "attention_and_ffn";
    case PolicyKind::all_layers: return "all_layers";
    case PolicyKind::random_layers: return "random:" + std::to_string(count);
  }
  return {};
}

namespace {

std::vector<Block> policy_blocks(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::ffn_up_down:
    case PolicyKind::random_layers: return {Block::ffn_up, Block::ffn_down};
    case PolicyKind::ffn_all: return {Block::ffn_gate, Block::ffn_up, Block::ffn_down};
    case PolicyKind::attention_only: return {Block::attn_q, Block::attn_k, Block::attn_v, Block::attn_o};
    case PolicyKind::attention_and_ffn:
      return {Block::attn_q, Block::attn_k, Block::attn_v, Block::attn_o, Block::ffn_up, Block::ffn_down};
    case PolicyKind::all_layers: return {};
  }
  return {};
}

}  // namespace

TrainPlan build_train_plan(const ModelConfig& config, std::span<const int> layers, const Policy& policy) {
  TrainPlan plan;
  plan.policy = policy;
  const auto registry = enumerate_params(config);
  if (policy.kind == PolicyKind::all_layers) {
    for (int l = 1; l <= config.n_layers; ++l) plan.layers.push_back(l);
    plan.trainable = registry;
    return plan;
  }
  std::set<int> chosen;
  if (policy.kind == PolicyKind::random_layers) {
    if (policy.count < 1 || policy.count > config.n_layers) {
      throw ConfigError("random policy count must lie in 1.." + std::to_string(config.n_layers));
    }
    std::vector<int> all(static_cast<std::size_t>(config.n_layers));
    for (int l = 1; l <= config.n_layers; ++l) all[static_cast<std::size_t>(l - 1)] = l;
    std::mt19937_64 rng(policy.seed);
    for (std::size_t i = 0; i < static_cast<std::size_t>(policy.count); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng)]);
      chosen.insert(all[i]);
    }
  } else {
    for (int l : layers) {
      if (l < 1 || l > config.n_layers) {
        throw ConfigError("layer " + std::to_string(l) + " outside 1.." + std::to_string(config.n_layers));
      }
      chosen.insert(l);
    }
  }
  plan.layers.assign(chosen.begin(), chosen.end());
  const auto blocks = policy_blocks(policy.kind);
  for (const ParamRef& r : registry) {
    if (chosen.count(r.layer) && std::find(blocks.begin(), blocks.end(), r.block) != blocks.end()) {
      plan.trainable.push_back(r);
    }
  }
  if (plan.trainable.empty()) throw SelectionError("train plan is empty: no layers selected");
  return plan;
}

TrainPlan build_train_plan(const ModelConfig& config, const SelectionResult& selection, const Policy& policy) {
  return build_train_plan(config, selection.selected, policy);
}

ParamFractionReport count_parameters(const ModelConfig& config, const TrainPlan& plan) {
  return count_parameters(config, std::span<const ParamRef>(plan.trainable));
}

std::vector<int> parse_layer_spec(std::string_view spec) {
  auto number = [&](std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("bad layer spec '" + std::string(spec) + "'");
    }
    return v;
  };
  std::set<int> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const auto part = spec.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (const auto dots = part.find(".."); dots != std::string_view::npos) {
      const int lo = number(part.substr(0, dots));
      const int hi = number(part.substr(dots + 2));
      if (lo > hi) throw ConfigError("bad layer range '" + std::string(part) + "'");
      for (int l = lo; l <= hi; ++l) out.insert(l);
    } else {
      out.insert(number(part));
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return {out.begin(), out.end()};
}

void save_selection(const std::filesystem::path& path, const SelectionResult& s, const TrainPlan* plan,
                    const ModelConfig* config) {
  nlohmann::json j;
  std::vector<double> scores;
  for (int l : s.K) scores.push_back(s.msd_per_layer.at(l));
  j["K"] = s.K;
  j["msd"] = scores;
  j["theta"] = s.theta;
  j["selected"] = s.selected;
  if (plan) {
    j["policy"] = plan->policy.to_string();
    j["layers"] = plan->layers;
    std::vector<std::string> names;
    for (const auto& r : plan->trainable) names.push_back(r.name());
    j["trainable"] = names;
    if (config) {
      const auto rep = count_parameters(*config, *plan);
      j["trainable_params"] = rep.trainable;
      j["total_params"] = rep.total;
      j["trainable_param_fraction"] = rep.fraction;
    }
  }
  write_json_file(path, j);
}

SelectionResult load_selection(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    SelectionResult s;
    s.K = j.at("K").get<std::vector<int>>();
    const auto scores = j.at("msd").get<std::vector<double>>();
    if (scores.size() != s.K.size()) throw DataError("selection file: msd/K length mismatch");
    for (std::size_t i = 0; i < scores.size(); ++i) s.msd_per_layer[s.K[i]] = scores[i];
    s.theta = j.at("theta").get<double>();
    s.selected = j.at("selected").get<std::vector<int>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed selection " + path.string() + ": " + e.what());
  }
}

}  // namespace slam
