// SPDX-License-Identifier: Apache-2.0
//
// Hand-written reverse pass for BasicModel. Gradients are only materialised
// for the parameters a buffer was created for; the backward sweep stops at
// the lowest layer that owns a trainable matrix.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slam/model.hpp"

namespace slam {

// One supervised sequence. mask[t] != 0 marks tokens[t] as a target predicted
// from the prefix tokens[0..t-1]; mask[0] is therefore ignored.
struct TrainingExample {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;

  std::size_t target_count() const;
};

template <class T>
class GradientBuffer {
 public:
  GradientBuffer(const BasicModel<T>& model, std::span<const ParamRef> trainable);

  bool is_trainable(std::size_t index) const { return trainable_[index]; }
  Mat<T>& grad(std::size_t index) { return grads_[index]; }
  const Mat<T>& grad(std::size_t index) const { return grads_[index]; }
  std::size_t tensor_count() const { return grads_.size(); }
  // Number of trainable scalars.
  std::uint64_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  void zero();
  T squared_norm() const;
  void scale(T factor);

 private:
  std::vector<bool> trainable_;
  std::vector<Mat<T>> grads_;
  std::uint64_t size_ = 0;
};

// Mean NLL over all target tokens of the batch. When grads is non-null the
// gradient of that mean is accumulated into it (callers zero it first).
// Throws UndefinedError if the batch has no target token.
template <class T>
T batch_loss(const BasicModel<T>& model, std::span<const TrainingExample> batch,
             GradientBuffer<T>* grads = nullptr);

}  // namespace slam
