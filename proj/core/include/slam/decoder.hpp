// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "slam/model.hpp"

namespace slam {

// Incremental inference with a key/value cache. Produces the same logits as
// BasicModel::forward, one position at a time. Holds a reference to the model,
// which must outlive the decoder and stay unmodified while it is in use.
template <class T>
class Decoder {
 public:
  explicit Decoder(const BasicModel<T>& model);

  // Appends one token and returns the logits predicting the next one.
  // Throws DataError when the context is full or the id is out of range.
  RowVec<T> step(TokenId token);
  // Feeds a prompt; returns the logits after its last token.
  RowVec<T> prefill(std::span<const TokenId> tokens);

  std::size_t position() const { return pos_; }
  std::size_t capacity() const { return static_cast<std::size_t>(model_.config().max_seq_len); }
  void reset() { pos_ = 0; }

 private:
  const BasicModel<T>& model_;
  std::vector<Mat<T>> keys_;    // per layer [max_seq_len x d_model], rotated
  std::vector<Mat<T>> values_;  // per layer [max_seq_len x d_model]
  std::size_t pos_ = 0;
};

}  // namespace slam
