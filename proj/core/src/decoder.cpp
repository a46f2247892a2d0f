// SPDX-License-Identifier: Apache-2.0

#include "slam/decoder.hpp"

#include <cmath>
#include <string>

#include "forward_pass.hpp"
#include "slam/error.hpp"

namespace slam {

template <class T>
Decoder<T>::Decoder(const BasicModel<T>& model) : model_(model) {
  const ModelConfig& cfg = model.config();
  keys_.assign(static_cast<std::size_t>(cfg.n_layers), Mat<T>(cfg.max_seq_len, cfg.d_model));
  values_.assign(static_cast<std::size_t>(cfg.n_layers), Mat<T>(cfg.max_seq_len, cfg.d_model));
}

template <class T>
RowVec<T> Decoder<T>::step(TokenId token) {
  const ModelConfig& cfg = model_.config();
  if (pos_ >= capacity()) {
    throw DataError("decoder context full at " + std::to_string(capacity()) + " tokens");
  }
  if (token < 0 || token >= cfg.vocab_size) {
    throw DataError("decoder: token id " + std::to_string(token) + " out of range");
  }
  const int hd = cfg.head_dim();
  const T eps = static_cast<T>(cfg.norm_eps);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const auto n_ctx = static_cast<Eigen::Index>(pos_ + 1);

  Mat<T> x = model_.weight(kGlobalLayer, Block::embedding).row(token);
  Mat<T> h;
  ColVec<T> inv;
  Mat<T> attn(1, cfg.d_model);
  for (int l = 1; l <= cfg.n_layers; ++l) {
    Mat<T>& kc = keys_[static_cast<std::size_t>(l - 1)];
    Mat<T>& vc = values_[static_cast<std::size_t>(l - 1)];
    detail::rms_norm(x, model_.weight(l, Block::norm, 0), eps, h, inv);
    Mat<T> q = h * model_.weight(l, Block::attn_q);
    Mat<T> k = h * model_.weight(l, Block::attn_k);
    detail::apply_rope(q, model_.rope_cos(), model_.rope_sin(), cfg.n_heads, pos_);
    detail::apply_rope(k, model_.rope_cos(), model_.rope_sin(), cfg.n_heads, pos_);
    kc.row(static_cast<Eigen::Index>(pos_)) = k.row(0);
    vc.row(static_cast<Eigen::Index>(pos_)) = (h * model_.weight(l, Block::attn_v)).row(0);
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      RowVec<T> s = (q.block(0, hh * hd, 1, hd) *
                     kc.block(0, hh * hd, n_ctx, hd).transpose()) * scale;
      const T mx = s.maxCoeff();
      s = (s.array() - mx).exp().matrix();
      s /= s.sum();
      attn.block(0, hh * hd, 1, hd).noalias() = s * vc.block(0, hh * hd, n_ctx, hd);
    }
    x.noalias() += attn * model_.weight(l, Block::attn_o);

    detail::rms_norm(x, model_.weight(l, Block::norm, 1), eps, h, inv);
    RowVec<T> g = h * model_.weight(l, Block::ffn_gate);
    const RowVec<T> u = h * model_.weight(l, Block::ffn_up);
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(j) = activate(g(j), cfg.activation) * u(j);
    x.noalias() += g * model_.weight(l, Block::ffn_down);
  }
  detail::rms_norm(x, model_.weight(kGlobalLayer, Block::norm, 0), eps, h, inv);
  ++pos_;
  return detail::unembed(model_, h).row(0);
}

template <class T>
RowVec<T> Decoder<T>::prefill(std::span<const TokenId> tokens) {
  if (tokens.empty()) throw DataError("decoder: empty prompt");
  RowVec<T> logits;
  for (TokenId t : tokens) logits = step(t);
  return logits;
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace slam
