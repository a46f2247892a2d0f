// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "slam/decoder.hpp"
#include "slam/model.hpp"
#include "slam/profiler.hpp"
#include "slam/selector.hpp"
#include "slam/tokenizer.hpp"
#include "slam/trainer.hpp"

namespace {

slam::ModelConfig desk_config() {
  slam::ModelConfig c;
  c.n_layers = 6;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_inter = 256;
  c.vocab_size = 440;
  c.max_seq_len = 256;
  c.seed = 1;
  return c;
}

std::vector<slam::TokenId> random_tokens(std::size_t n, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<slam::TokenId> out{slam::Tokenizer::kBos};
  while (out.size() < n) out.push_back(static_cast<slam::TokenId>(3 + rng() % static_cast<std::uint64_t>(vocab - 3)));
  return out;
}

std::vector<slam::TrainingExample> batch_of(int n, std::size_t len, int vocab) {
  std::vector<slam::TrainingExample> b(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& ex = b[static_cast<std::size_t>(i)];
    ex.tokens = random_tokens(len, vocab, static_cast<std::uint64_t>(i));
    ex.mask.assign(len, 0);
    for (std::size_t k = len / 2; k < len; ++k) ex.mask[k] = 1;
  }
  return b;
}

void BM_Forward(benchmark::State& state) {
  const slam::Model m(desk_config());
  const auto tokens = random_tokens(static_cast<std::size_t>(state.range(0)), m.config().vocab_size, 3);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(tokens).logits.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_DecodeStep(benchmark::State& state) {
  const slam::Model m(desk_config());
  slam::Decoder<float> dec(m);
  const auto prompt = random_tokens(64, m.config().vocab_size, 4);
  for (auto _ : state) {
    state.PauseTiming();
    dec.reset();
    dec.prefill(prompt);
    state.ResumeTiming();
    for (int i = 0; i < 32; ++i) benchmark::DoNotOptimize(dec.step(5).data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_DecodeStep)->Unit(benchmark::kMillisecond);

// Optimizer step on 8 x 108 tokens: selected layers {1, 2} versus every parameter.
void BM_TrainStep(benchmark::State& state) {
  slam::Model m(desk_config());
  const auto policy = state.range(0) == 0 ? slam::Policy{} : slam::Policy::parse("all_layers");
  const auto plan = slam::build_train_plan(m.config(), std::vector<int>{1, 2}, policy);
  auto trainer = slam::apply_freeze(m, plan, slam::TrainConfig{});
  const auto batch = batch_of(8, 108, m.config().vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(batch));
  state.SetLabel(state.range(0) == 0 ? "ffn_up_down{1,2}" : "all_layers");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Profile(benchmark::State& state) {
  const slam::Model m(desk_config());
  std::map<std::string, std::vector<std::vector<slam::TokenId>>> prompts;
  for (const char* lang : {"en", "xa", "xb", "xc"}) {
    for (int i = 0; i < 16; ++i) prompts[lang].push_back(random_tokens(80, m.config().vocab_size, static_cast<std::uint64_t>(i)));
  }
  for (auto _ : state) benchmark::DoNotOptimize(slam::profile_model(m, prompts, 0.5).n_layers());
}
BENCHMARK(BM_Profile)->Unit(benchmark::kMillisecond);

void BM_SelectLayers(benchmark::State& state) {
  std::mt19937_64 rng(5);
  slam::ActivationProfile p(32, 1024, {"en", "a", "b", "c", "d", "e", "f", "g", "h", "i"});
  std::vector<std::uint64_t> counts(1024);
  for (int l = 1; l <= 32; ++l) {
    for (const auto& lang : p.languages()) {
      for (auto& c : counts) c = rng() % 101;
      p.add_counts(l, lang, 100, counts);
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(slam::select_layers(p).theta);
}
BENCHMARK(BM_SelectLayers)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
