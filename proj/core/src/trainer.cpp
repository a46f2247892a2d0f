// SPDX-License-Identifier: Apache-2.0

#include "slam/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "json_io.hpp"
#include "slam/error.hpp"

namespace slam {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (warmup_steps < 0 || max_steps < 0) throw ConfigError("step counts must be >= 0");
}

double TrainLog::mean_step_ms() const {
  if (step_ms.empty()) return 0.0;
  return std::accumulate(step_ms.begin(), step_ms.end(), 0.0) / static_cast<double>(step_ms.size());
}

SelectiveTrainer::SelectiveTrainer(Model& model, std::vector<ParamRef> trainable, TrainConfig config)
    : model_(model),
      trainable_(std::move(trainable)),
      config_(std::move(config)),
      grads_(model, trainable_) {
  config_.validate();
  if (trainable_.empty()) throw SelectionError("cannot train on an empty plan");
  for (std::size_t i = 0; i < model.registry().size(); ++i) {
    if (!grads_.is_trainable(i)) continue;
    indices_.push_back(i);
    const Mat<float>& w = model.tensor(i);
    state_size_ += static_cast<std::uint64_t>(w.size());
    if (config_.optimizer == OptimizerKind::adam) {
      m_.push_back(Mat<float>::Zero(w.rows(), w.cols()));
      v_.push_back(Mat<float>::Zero(w.rows(), w.cols()));
    }
  }
}

double SelectiveTrainer::step(std::span<const TrainingExample> batch) {
  if (batch.empty()) throw DataError("empty training batch");
  grads_.zero();
  const float loss = batch_loss(model_, batch, &grads_);
  const float norm2 = grads_.squared_norm();
  if (!std::isfinite(loss) || !std::isfinite(norm2)) {
    throw NumericError("non-finite " + std::string(std::isfinite(loss) ? "gradient" : "loss") +
                       " at step " + std::to_string(step_ + 1) + " (loss " + std::to_string(loss) + ")");
  }
  if (config_.grad_clip) {
    const double norm = std::sqrt(static_cast<double>(norm2));
    if (norm > *config_.grad_clip) grads_.scale(static_cast<float>(*config_.grad_clip / norm));
  }
  ++step_;
  double lr = config_.learning_rate;
  if (config_.warmup_steps > 0 && step_ <= static_cast<std::uint64_t>(config_.warmup_steps)) {
    lr *= static_cast<double>(step_) / static_cast<double>(config_.warmup_steps);
  }
  if (config_.optimizer == OptimizerKind::sgd) {
    for (std::size_t k : indices_) model_.tensor(k) -= static_cast<float>(lr) * grads_.grad(k);
    return loss;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const auto t = static_cast<double>(step_);
  const float step_size = static_cast<float>(lr * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t)));
  const auto eps = static_cast<float>(config_.epsilon * std::sqrt(1.0 - std::pow(b2, t)));
  for (std::size_t s = 0; s < indices_.size(); ++s) {
    const Mat<float>& g = grads_.grad(indices_[s]);
    m_[s] = static_cast<float>(b1) * m_[s] + static_cast<float>(1.0 - b1) * g;
    v_[s] = static_cast<float>(b2) * v_[s] + static_cast<float>(1.0 - b2) * g.cwiseProduct(g);
    model_.tensor(indices_[s]).array() -= step_size * m_[s].array() / (v_[s].array().sqrt() + eps);
  }
  return loss;
}

SelectiveTrainer apply_freeze(Model& model, const TrainPlan& plan, const TrainConfig& config) {
  return SelectiveTrainer(model, plan.trainable, config);
}

namespace {

std::vector<ParamRef> complement(const Model& model, std::span<const ParamRef> plan) {
  std::vector<ParamRef> out;
  for (const ParamRef& r : model.registry()) {
    if (std::find(plan.begin(), plan.end(), r) == plan.end()) out.push_back(r);
  }
  return out;
}

}  // namespace

TrainLog train(Model& model, std::span<const TrainingExample> data, const TrainPlan& plan,
               const TrainConfig& config, const std::function<void(std::uint64_t, double)>& on_step) {
  SelectiveTrainer trainer = apply_freeze(model, plan, config);
  TrainLog log;
  const auto frozen = complement(model, plan.trainable);
  // An empty selection would checksum everything; use a fixed value instead.
  log.frozen_checksum_before = frozen.empty() ? 0 : parameter_checksum(model, frozen);
  log.trainable_checksum_before = parameter_checksum(model, plan.trainable);

  const auto limit = static_cast<std::size_t>(std::min(config.max_seq_len, model.config().max_seq_len));
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].tokens.size() > limit) {
      ++log.skipped;
    } else if (data[i].target_count() > 0) {
      usable.push_back(i);
    }
  }
  std::mt19937_64 rng(config.seed);
  std::vector<TrainingExample> batch;
  bool done = usable.empty();
  for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), rng);
    for (std::size_t start = 0; start < usable.size() && !done; start += static_cast<std::size_t>(config.batch_size)) {
      batch.clear();
      const std::size_t end = std::min(usable.size(), start + static_cast<std::size_t>(config.batch_size));
      for (std::size_t k = start; k < end; ++k) batch.push_back(data[usable[k]]);
      const auto t0 = std::chrono::steady_clock::now();
      const double loss = trainer.step(batch);
      const auto t1 = std::chrono::steady_clock::now();
      log.losses.push_back(loss);
      log.step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      if (on_step) on_step(trainer.steps_taken(), loss);
      if (config.max_steps > 0 && trainer.steps_taken() >= static_cast<std::uint64_t>(config.max_steps)) {
        done = true;
      }
    }
  }
  log.frozen_checksum_after = frozen.empty() ? 0 : parameter_checksum(model, frozen);
  log.trainable_checksum_after = parameter_checksum(model, plan.trainable);
  return log;
}

GradientCheckReport gradient_check(const Model64& model, std::span<const TrainingExample> batch,
                                   std::span<const ParamRef> plan, double fd_step) {
  Model64 m = model;
  GradientBuffer<double> g(m, plan);
  g.zero();
  batch_loss(m, batch, &g);
  GradientCheckReport rep;
  for (std::size_t i = 0; i < m.registry().size(); ++i) {
    if (!g.is_trainable(i)) {
      if (g.grad(i).size() > 0) {
        rep.max_abs_frozen_gradient = std::max(rep.max_abs_frozen_gradient, g.grad(i).cwiseAbs().maxCoeff());
      }
      continue;
    }
    Mat<double>& w = m.tensor(i);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double orig = w.data()[k];
      w.data()[k] = orig + fd_step;
      const double up = batch_loss(m, batch);
      w.data()[k] = orig - fd_step;
      const double down = batch_loss(m, batch);
      w.data()[k] = orig;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double analytic = g.grad(i).data()[k];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      rep.max_relative_error = std::max(rep.max_relative_error, rel);
      ++rep.checked;
    }
  }
  return rep;
}

void save_train_log(const std::filesystem::path& path, const TrainLog& log) {
  nlohmann::json j;
  j["steps"] = log.losses.size();
  j["losses"] = log.losses;
  j["step_ms"] = log.step_ms;
  j["mean_step_ms"] = log.mean_step_ms();
  j["skipped"] = log.skipped;
  j["frozen_checksum_before"] = log.frozen_checksum_before;
  j["frozen_checksum_after"] = log.frozen_checksum_after;
  j["frozen_unchanged"] = log.frozen_checksum_before == log.frozen_checksum_after;
  j["trainable_checksum_before"] = log.trainable_checksum_before;
  j["trainable_checksum_after"] = log.trainable_checksum_after;
  write_json_file(path, j);
}

TrainLog load_train_log(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    TrainLog log;
    log.losses = j.at("losses").get<std::vector<double>>();
    log.step_ms = j.at("step_ms").get<std::vector<double>>();
    log.skipped = j.at("skipped").get<std::size_t>();
    log.frozen_checksum_before = j.at("frozen_checksum_before").get<std::uint64_t>();
    log.frozen_checksum_after = j.at("frozen_checksum_after").get<std::uint64_t>();
    log.trainable_checksum_before = j.at("trainable_checksum_before").get<std::uint64_t>();
    log.trainable_checksum_after = j.at("trainable_checksum_after").get<std::uint64_t>();
    return log;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed training log " + path.string() + ": " + e.what());
  }
}

}  // namespace slam
