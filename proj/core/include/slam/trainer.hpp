// SPDX-License-Identifier: Apache-2.0
//
// Selective fine-tuning: parameters outside the plan are never written and
// carry no optimizer state.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "slam/backprop.hpp"
#include "slam/model.hpp"
#include "slam/selector.hpp"

namespace slam {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int epochs = 4;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int max_seq_len = 256;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::optional<double> grad_clip;  // global L2 norm
  // Linear warmup steps, then constant.
  int warmup_steps = 0;
  // Stop after this many optimizer steps; 0 means run every epoch.
  int max_steps = 0;

  // Throws ConfigError.
  void validate() const;
};

struct TrainLog {
  std::vector<double> losses;   // per step
  std::vector<double> step_ms;  // wall-clock per optimizer step
  std::size_t skipped = 0;      // examples longer than max_seq_len
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
  std::uint64_t trainable_checksum_before = 0;
  std::uint64_t trainable_checksum_after = 0;

  double mean_step_ms() const;
};

// Owns the optimizer state for the plan's tensors only.
class SelectiveTrainer {
 public:
  // Throws SelectionError for an empty plan.
  SelectiveTrainer(Model& model, std::vector<ParamRef> trainable, TrainConfig config);

  // Scalars per optimizer moment; equals the trainable parameter count.
  std::uint64_t state_size() const { return state_size_; }
  const std::vector<ParamRef>& trainable() const { return trainable_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t steps_taken() const { return step_; }

  // One optimizer step on the batch mean NLL; returns the pre-update loss.
  // Throws NumericError on a non-finite loss or gradient, leaving the model
  // unchanged.
  double step(std::span<const TrainingExample> batch);

 private:
  Model& model_;
  std::vector<ParamRef> trainable_;
  TrainConfig config_;
  GradientBuffer<float> grads_;
  std::vector<std::size_t> indices_;
  std::vector<Mat<float>> m_;
  std::vector<Mat<float>> v_;
  std::uint64_t state_size_ = 0;
  std::uint64_t step_ = 0;
};

SelectiveTrainer apply_freeze(Model& model, const TrainPlan& plan, const TrainConfig& config);

// Epochs over a seeded shuffle of `data`. Examples longer than
// config.max_seq_len (or the model context) are skipped and counted.
// `on_step` receives (step index, loss) after every step.
TrainLog train(Model& model, std::span<const TrainingExample> data, const TrainPlan& plan,
               const TrainConfig& config,
               const std::function<void(std::uint64_t, double)>& on_step = {});

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::uint64_t checked = 0;           // plan scalars compared
  double max_abs_frozen_gradient = 0;  // over every non-plan tensor
};

// Central differences against the analytic gradient for every plan scalar.
// Relative error is |n - a| / max(|n|, |a|, 1e-4).
GradientCheckReport gradient_check(const Model64& model, std::span<const TrainingExample> batch,
                                   std::span<const ParamRef> plan, double fd_step = 1e-5);

void save_train_log(const std::filesystem::path& path, const TrainLog& log);
TrainLog load_train_log(const std::filesystem::path& path);

}  // namespace slam
