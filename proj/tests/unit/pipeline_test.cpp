// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "slam/checkpoint.hpp"
#include "slam/pipeline.hpp"

namespace slam {
namespace {

namespace fs = std::filesystem;

RunConfig tiny_run(const fs::path& workdir) {
  RunConfig c;
  c.workdir = workdir;
  c.corpus.n_train = 40;
  c.corpus.n_translation = 10;
  c.corpus.n_english_translation = 6;
  c.corpus.n_test = 2;
  c.corpus.min_steps = c.corpus.max_steps = 2;
  c.model.n_layers = 2;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_inter = 32;
  c.model.max_seq_len = 192;
  c.base_train.epochs = 1;
  c.base_train.batch_size = 8;
  c.align_train.epochs = 1;
  c.align_train.batch_size = 8;
  c.profile_samples = 4;
  c.max_new_tokens = 6;
  c.layers = "1";
  c.seed = 5;
  c.propagate_seed();
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("slam_pipeline_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  fs::path root_;
};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = tiny_run("w");
  c.policy = "attention_only";
  c.corpus.numbers.max_value = 50;
  c.align_train.grad_clip = 1.5;
  const RunConfig back = run_config_from_json_text(run_config_to_json_text(c));
  EXPECT_EQ(run_config_to_json_text(back), run_config_to_json_text(c));
  EXPECT_EQ(back.corpus.n_english_translation, 6);
  EXPECT_EQ(back.align_train.grad_clip, 1.5);
}

TEST(RunConfig, SeedPropagates) {
  RunConfig c;
  c.seed = 11;
  c.propagate_seed();
  EXPECT_EQ(c.corpus.seed, 11u);
  EXPECT_EQ(c.model.seed, 11u);
  EXPECT_NE(c.base_train.seed, c.align_train.seed);
}

TEST(RunConfig, Validation) {
  RunConfig c = tiny_run("w");
  EXPECT_NO_THROW(c.validate());
  c.corpus.n_test = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_run("w");
  c.policy = "bogus";
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_run("w");
  c.tau = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(run_config_from_json_text("{not json"), ConfigError);
}

TEST_F(PipelineTest, DeterministicReportAndFrozenRegion) {
  const RunConfig a = tiny_run(root_ / "a");
  const RunConfig b = tiny_run(root_ / "b");
  const PipelineResult ra = run_pipeline(a, false);
  run_pipeline(b, false);
  const auto ja = read_json(RunPaths(a).report);
  const auto jb = read_json(RunPaths(b).report);
  EXPECT_EQ(ja["report_checksum"], jb["report_checksum"]);
  EXPECT_EQ(ja["results"], jb["results"]);
  EXPECT_TRUE(ja["results"]["frozen_region_unchanged"].get<bool>());

  const Model base = load_checkpoint(RunPaths(a).base_checkpoint);
  const auto expected = count_parameters(base.config(), ra.selection.plan);
  EXPECT_EQ(ja["results"]["trainable_params"].get<std::uint64_t>(), expected.trainable);
  EXPECT_DOUBLE_EQ(ja["results"]["trainable_param_fraction"].get<double>(), expected.fraction);

  const Model aligned = load_checkpoint(RunPaths(a).aligned_checkpoint);
  EXPECT_EQ(region_bytes(base, ra.selection.plan.trainable, true),
            region_bytes(aligned, ra.selection.plan.trainable, true));
  EXPECT_GT(ra.selective_step_ms, 0.0);
  EXPECT_GT(ra.all_layers_step_ms, 0.0);
}

TEST_F(PipelineTest, RefusesToOverwrite) {
  const RunConfig c = tiny_run(root_);
  run_pipeline(c, false);
  EXPECT_THROW(run_pipeline(c, false), OutputExistsError);
  EXPECT_NO_THROW(run_pipeline(c, true));
}

TEST_F(PipelineTest, AssembleMatchesPipeline) {
  const RunConfig c = tiny_run(root_);
  run_pipeline(c, false);
  const auto before = read_json(RunPaths(c).report);
  const PipelineResult r = assemble_pipeline_result(c);
  save_pipeline_report(RunPaths(c).report, r, c);
  EXPECT_EQ(read_json(RunPaths(c).report)["report_checksum"], before["report_checksum"]);
}

TEST_F(PipelineTest, DatasetEchoMismatchIsDataError) {
  RunConfig c = tiny_run(root_);
  gen_data(c, false);
  EXPECT_NO_THROW(load_dataset(c));
  c.corpus.n_train = 41;
  EXPECT_THROW(load_dataset(c), DataError);
  EXPECT_THROW(gen_data(c, false), OutputExistsError);
}

TEST_F(PipelineTest, ProfilingPromptsCoverEveryLanguage) {
  const RunConfig c = tiny_run(root_);
  const Dataset d = gen_data(c, false);
  const auto prompts = profiling_prompts(d, 3);
  ASSERT_EQ(prompts.size(), d.languages.size());
  for (const auto& [lang, p] : prompts) EXPECT_EQ(p.size(), 3u) << lang;
}

}  // namespace
}  // namespace slam
