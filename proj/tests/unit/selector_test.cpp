// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "selection_oracle.hpp"
#include "slam/error.hpp"
#include "slam/selector.hpp"

namespace slam {
namespace {

TEST(Msd, Examples) {
  EXPECT_EQ(msd(std::vector<double>{0.4, 0.4, 0.4}), 0.0);
  EXPECT_NEAR(msd(std::vector<double>{0.2, 0.4}), 0.01, 1e-15);
  EXPECT_NEAR(msd(std::vector<double>{0.1, 0.2, 0.3}), 0.02 / 3.0, 1e-15);
  EXPECT_THROW(msd(std::vector<double>{0.3}), SelectionError);
}

TEST(Msd, ScalesQuadratically) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(2 + rng() % 8);
    for (double& x : r) x = u(rng);
    const double c = 0.1 + 3.0 * u(rng);
    std::vector<double> scaled = r;
    for (double& x : scaled) x *= c;
    EXPECT_NEAR(msd(scaled), c * c * msd(r), 1e-12);
  }
}

TEST(Theta, Examples) {
  EXPECT_NEAR(theta(std::vector<double>{0.01, 0.02, 0.03}), 0.02, 1e-15);
  EXPECT_EQ(theta(std::vector<double>{0.07}), 0.07);
  EXPECT_EQ(theta(std::vector<double>{0.0, 0.0}), 0.0);
  EXPECT_THROW(theta(std::vector<double>{}), SelectionError);
}

TEST(SelectFromScores, Examples) {
  const auto s = select_from_scores({{1, 0.03}, {2, 0.02}, {3, 0.005}});
  EXPECT_NEAR(s.theta, 0.055 / 3.0, 1e-15);
  EXPECT_EQ(s.selected, std::vector<int>({1, 2}));
  EXPECT_EQ(s.K, std::vector<int>({1, 2, 3}));
  const auto flat = select_from_scores({{1, 0.01}, {2, 0.01}, {3, 0.01}});
  EXPECT_TRUE(flat.empty());
  for (double v : {0.1, 0.3, 0.7, 1.0 / 3.0, 0.123456789}) {
    for (int n = 2; n <= 12; ++n) {
      std::map<int, double> same;
      for (int l = 1; l <= n; ++l) same[l] = v;
      EXPECT_TRUE(select_from_scores(same).empty()) << v << " x" << n;
    }
  }
  EXPECT_THROW(select_from_scores({}), SelectionError);
}

TEST(SelectLayers, AgreesWithBruteForceOnRandomProfiles) {
  std::mt19937_64 rng(20240601);
  int with_selection = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto raw = testing::random_raw_profile(rng);
    const auto oracle = testing::brute_force_select(raw);
    const auto p = testing::to_profile(raw);
    const auto curve = overlap_curve(p);
    ASSERT_EQ(curve.avg.size(), oracle.avg_overlap.size());
    for (std::size_t l = 0; l < curve.avg.size(); ++l) EXPECT_NEAR(curve.avg[l], oracle.avg_overlap[l], 1e-12);
    if (!oracle.theta_defined) {
      EXPECT_THROW(select_layers(p), SelectionError);
      continue;
    }
    const auto s = select_layers(p);
    EXPECT_EQ(s.K, oracle.K);
    ASSERT_EQ(s.msd_per_layer.size(), oracle.msd.size());
    for (const auto& [layer, m] : oracle.msd) EXPECT_NEAR(s.msd_per_layer.at(layer), m, 1e-12);
    EXPECT_NEAR(s.theta, oracle.theta, 1e-12);
    EXPECT_EQ(s.selected, oracle.selected);
    with_selection += s.empty() ? 0 : 1;
  }
  EXPECT_GT(with_selection, 30);
}

TEST(SelectionInvariants, SelectedExceedMean) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = testing::to_profile(testing::random_raw_profile(rng));
    SelectionResult s;
    try {
      s = select_layers(p);
    } catch (const SelectionError&) {
      continue;
    }
    double sum = 0.0;
    for (const auto& [layer, m] : s.msd_per_layer) sum += m;
    EXPECT_NEAR(s.theta, sum / static_cast<double>(s.msd_per_layer.size()), 1e-12);
    for (int l : s.selected) {
      EXPECT_TRUE(std::find(s.K.begin(), s.K.end(), l) != s.K.end());
      EXPECT_GT(s.msd_per_layer.at(l), s.theta);
    }
  }
}

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 6;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_inter = 32;
  c.vocab_size = 20;
  return c;
}

TEST(TrainPlan, PolicyExpansion) {
  const auto c = small_config();
  const std::vector<int> layers = {1, 2};
  const auto up_down = build_train_plan(c, layers, Policy{});
  ASSERT_EQ(up_down.trainable.size(), 4u);
  EXPECT_EQ(up_down.trainable[0].name(), "layers.1.ffn_up");
  EXPECT_EQ(up_down.trainable[3].name(), "layers.2.ffn_down");
  EXPECT_EQ(build_train_plan(c, layers, Policy::parse("ffn_all")).trainable.size(), 6u);
  EXPECT_EQ(build_train_plan(c, layers, Policy::parse("attention_only")).trainable.size(), 8u);
  EXPECT_EQ(build_train_plan(c, layers, Policy::parse("attention_and_ffn")).trainable.size(), 12u);
  const auto all = build_train_plan(c, layers, Policy::parse("all_layers"));
  EXPECT_EQ(count_parameters(c, all).trainable, total_parameter_count(c));
  EXPECT_EQ(all.layers.size(), 6u);
}

TEST(TrainPlan, RandomLayersDeterministic) {
  const auto c = small_config();
  const auto a = build_train_plan(c, std::vector<int>{}, Policy::parse("random:3", 7));
  const auto b = build_train_plan(c, std::vector<int>{}, Policy::parse("random:3", 7));
  EXPECT_EQ(a.layers, b.layers);
  EXPECT_EQ(a.layers.size(), 3u);
  EXPECT_EQ(a.trainable.size(), 6u);
  bool differs = false;
  for (std::uint64_t seed = 8; seed < 20; ++seed) {
    differs |= build_train_plan(c, std::vector<int>{}, Policy::parse("random:3", seed)).layers != a.layers;
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(build_train_plan(c, std::vector<int>{}, Policy::parse("random:7")), ConfigError);
}

TEST(TrainPlan, FractionEqualsSumOfRefSizes) {
  const auto c = small_config();
  const auto plan = build_train_plan(c, std::vector<int>{2, 5}, Policy::parse("attention_and_ffn"));
  std::uint64_t sum = 0;
  for (const auto& r : plan.trainable) sum += r.size();
  const auto rep = count_parameters(c, plan);
  EXPECT_EQ(rep.trainable, sum);
  EXPECT_EQ(rep.fraction, static_cast<double>(sum) / static_cast<double>(total_parameter_count(c)));
}

TEST(TrainPlan, Errors) {
  const auto c = small_config();
  EXPECT_THROW(build_train_plan(c, std::vector<int>{}, Policy{}), SelectionError);
  EXPECT_THROW(build_train_plan(c, std::vector<int>{7}, Policy{}), ConfigError);
  EXPECT_THROW(Policy::parse("ffn"), ConfigError);
  EXPECT_THROW(Policy::parse("random:0"), ConfigError);
  EXPECT_THROW(Policy::parse("random:x"), ConfigError);
  SelectionResult empty;
  EXPECT_THROW(build_train_plan(c, empty, Policy{}), SelectionError);
}

TEST(TrainPlan, LlamaShapeFractions) {
  ModelConfig l7;
  l7.n_layers = 32;
  l7.d_model = 4096;
  l7.n_heads = 32;
  l7.d_inter = 11008;
  l7.vocab_size = 32000;
  ModelConfig l13 = l7;
  l13.n_layers = 40;
  l13.d_model = 5120;
  l13.n_heads = 40;
  l13.d_inter = 13824;
  auto pct = [](const ModelConfig& c, int n) {
    std::vector<int> layers;
    for (int l = 1; l <= n; ++l) layers.push_back(l);
    return 100.0 * count_parameters(c, build_train_plan(c, layers, Policy{})).fraction;
  };
  EXPECT_NEAR(pct(l7, 6), 8.0, 0.1);
  EXPECT_NEAR(pct(l13, 6), 6.5, 0.1);
  EXPECT_NEAR(pct(l7, 5), 6.7, 0.1);
  EXPECT_NEAR(pct(l13, 5), 5.4, 0.1);
}

TEST(LayerSpec, Parses) {
  EXPECT_EQ(parse_layer_spec("1..3"), std::vector<int>({1, 2, 3}));
  EXPECT_EQ(parse_layer_spec("5,1,3"), std::vector<int>({1, 3, 5}));
  EXPECT_EQ(parse_layer_spec("2..3,7"), std::vector<int>({2, 3, 7}));
  EXPECT_THROW(parse_layer_spec(""), ConfigError);
  EXPECT_THROW(parse_layer_spec("3..1"), ConfigError);
  EXPECT_THROW(parse_layer_spec("a"), ConfigError);
}

TEST(SelectionFile, RoundTrip) {
  const auto s = select_from_scores({{1, 0.03}, {2, 0.02}, {3, 0.005}});
  const auto c = small_config();
  const auto plan = build_train_plan(c, s, Policy{});
  const auto path = std::filesystem::temp_directory_path() / "slam_selection_test.json";
  save_selection(path, s, &plan, &c);
  const auto back = load_selection(path);
  EXPECT_EQ(back.K, s.K);
  EXPECT_EQ(back.selected, s.selected);
  EXPECT_EQ(back.theta, s.theta);
  EXPECT_EQ(back.msd_per_layer, s.msd_per_layer);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace slam
