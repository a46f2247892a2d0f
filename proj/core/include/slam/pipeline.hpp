// SPDX-License-Identifier: Apache-2.0
//
// Run configuration, workdir layout and the phases of a full run: data
// generation, base training, profiling, selection, selective alignment,
// evaluation and the comparative report.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slam/corpus.hpp"
#include "slam/error.hpp"
#include "slam/eval.hpp"
#include "slam/model.hpp"
#include "slam/profiler.hpp"
#include "slam/selector.hpp"
#include "slam/trainer.hpp"

namespace slam {

struct RunConfig {
  std::filesystem::path workdir = "slam_run";
  std::filesystem::path data_dir;  // empty: <workdir>/data
  CorpusConfig corpus;
  ModelConfig model;  // vocab_size is taken from the tokenizer
  TrainConfig base_train;
  TrainConfig align_train;
  double tau = 0.5;
  int profile_samples = 128;  // questions per language
  std::string policy = "ffn_up_down";
  // Explicit layers bypass the MSD selection, e.g. "1..3".
  std::optional<std::string> layers;
  int max_new_tokens = kDefaultMaxNewTokens;
  std::uint64_t seed = 0;

  // Copies `seed` into every component seed (corpus, model init, both
  // training shuffles, random layer policy).
  void propagate_seed();
  // Throws ConfigError.
  void validate() const;
};

// Keys mirror the field names; nested objects "corpus", "model",
// "base_train", "align_train". Missing keys keep their defaults.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json_text(std::string_view text);
std::string run_config_to_json_text(const RunConfig& config);

// Stable relative layout under the workdir.
struct RunPaths {
  explicit RunPaths(const RunConfig& config);

  std::filesystem::path workdir;
  std::filesystem::path data_dir;
  std::filesystem::path reasoning_train;    // data/train_reasoning.jsonl
  std::filesystem::path translation_train;  // data/train_translation.jsonl
  std::filesystem::path test_in_domain;     // data/test_in_domain.jsonl
  std::filesystem::path test_out_of_domain; // data/test_out_of_domain.jsonl
  std::filesystem::path base_checkpoint;    // checkpoints/base.ckpt
  std::filesystem::path aligned_checkpoint; // checkpoints/aligned.ckpt
  std::filesystem::path base_train_log;     // logs/base_train.json
  std::filesystem::path align_train_log;    // logs/align_train.json
  std::filesystem::path profile(std::string_view stage) const;      // profile/<stage>.json
  std::filesystem::path profile_csv(std::string_view stage) const;  // profile/<stage>.csv
  std::filesystem::path selection;          // selection.json
  // eval/<stage>_<split>.json and .csv
  std::filesystem::path eval(std::string_view stage, std::string_view split) const;
  std::filesystem::path eval_csv(std::string_view stage, std::string_view split) const;
  std::filesystem::path report;             // report.json
  std::filesystem::path config_echo;        // config.json
  std::filesystem::path sweep_layers;       // sweeps/layers.csv
  std::filesystem::path sweep_sublayers;    // sweeps/sublayers.csv
};

// Raised when an output exists and overwriting was not requested.
class OutputExistsError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct Dataset {
  std::vector<ToyLanguage> languages;  // English first
  Tokenizer tokenizer;
  std::vector<Sample> reasoning_train;
  std::vector<Sample> translation_train;
  std::vector<Sample> test_in_domain;
  std::vector<Sample> test_out_of_domain;
};

// Progress lines ("phase: message"); silent when empty.
using Logger = std::function<void(const std::string&)>;

// Builds the corpus and writes the four JSONL files.
Dataset gen_data(const RunConfig& config, bool overwrite, const Logger& log = {});
// Reads the JSONL files; languages and tokenizer are rebuilt from the config.
Dataset load_dataset(const RunConfig& config);

// The first `n` English training questions, rendered as inference prompts in
// every language of the dataset.
std::map<std::string, std::vector<std::vector<TokenId>>> profiling_prompts(const Dataset& data, int n);

ModelConfig resolved_model_config(const RunConfig& config, const Tokenizer& tok);

// Full-parameter training on English reasoning from a fresh model.
Model train_base(const RunConfig& config, const Dataset& data, TrainLog* log_out = nullptr,
                 const Logger& log = {});
ActivationProfile profile(const RunConfig& config, const Model& model, const Dataset& data);

// Selection plus the plan; explicit config.layers bypass the MSD rule but K
// and the scores are still reported. When no layer passes the threshold the
// plan is left empty and training on it fails with SelectionError. Explicit
// layers and the all_layers/random policies also work when K is empty.
struct Selection {
  SelectionResult result;
  TrainPlan plan;
};
Selection select(const RunConfig& config, const ActivationProfile& profile);

// Trains the plan on the translation data, in place.
TrainLog align(const RunConfig& config, Model& model, const TrainPlan& plan, const Dataset& data,
               const Logger& log = {});

struct StageEval {
  EvalReport in_domain;
  EvalReport out_of_domain;
};
StageEval evaluate_stage(const RunConfig& config, const Model& model, const Dataset& data);

// Average non-English/English overlap per layer, before and after alignment.
struct OverlapShift {
  std::map<int, double> before;
  std::map<int, double> after;
};
OverlapShift overlap_shift(const ActivationProfile& before, const ActivationProfile& after,
                           const std::vector<int>& layers);

struct PipelineResult {
  Selection selection;
  StageEval base;
  StageEval aligned;
  TrainLog base_log;
  TrainLog align_log;
  OverlapShift overlap;
  ParamFractionReport fraction;
  double selective_step_ms = 0.0;
  double all_layers_step_ms = 0.0;
  std::map<std::string, double> phase_seconds;
};

// gen-data (when the files are missing) -> train-base -> eval -> profile ->
// select -> align -> eval -> report. Every artifact is written under the
// workdir; report.json summarises the run.
PipelineResult run_pipeline(const RunConfig& config, bool overwrite, const Logger& log = {});

// Measures the mean optimizer step time of `plan` and of all_layers on the
// same batches, starting from `model`.
std::pair<double, double> step_time_comparison(const RunConfig& config, const Model& model,
                                               const TrainPlan& plan, const Dataset& data, int steps);

// Rebuilds the run summary from the artifacts of the individual commands:
// checkpoints, evaluation reports, profiles and training logs. The frozen
// region verdict is recomputed from the two checkpoints.
PipelineResult assemble_pipeline_result(const RunConfig& config, const Logger& log = {});

void save_pipeline_report(const std::filesystem::path& path, const PipelineResult& result,
                          const RunConfig& config);

// Aligns a copy of the base model for each row and evaluates it in-domain.
struct SweepRow {
  std::string label;
  std::vector<int> layers;
  std::string policy;
  double trainable_fraction = 0.0;
  double english_accuracy = 0.0;
  double avg_non_english_accuracy = 0.0;
  double avg_pcr = 0.0;
};
// Rows "1..k" for k = 1..n_layers, plus a random-layer row and all layers.
std::vector<SweepRow> sweep_layers(const RunConfig& config, const Model& base, const Dataset& data,
                                   const Logger& log = {});
// One row per policy on the selected layers.
std::vector<SweepRow> sweep_sublayers(const RunConfig& config, const Model& base, const Dataset& data,
                                      const std::vector<int>& layers, const Logger& log = {});
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace slam
