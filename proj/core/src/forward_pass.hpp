// SPDX-License-Identifier: Apache-2.0
//
// Internal: full-sequence forward pass that optionally keeps every
// intermediate needed by the reverse sweep.

#pragma once

#include <cmath>
#include <vector>

#include "slam/model.hpp"

namespace slam::detail {

template <class T>
struct LayerCache {
  Mat<T> x_in;      // residual entering the layer
  ColVec<T> inv_rms_attn;
  Mat<T> h_attn;    // normed input to attention
  Mat<T> q, k, v;   // q and k after rotation
  std::vector<Mat<T>> probs;  // per head, causal softmax
  Mat<T> attn_cat;  // concatenated head outputs before W_o
  Mat<T> x_mid;     // residual after attention
  ColVec<T> inv_rms_ffn;
  Mat<T> h_ffn;
  Mat<T> gate_pre;
  Mat<T> up;
  Mat<T> act;       // f(gate_pre) * up
};

template <class T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  Mat<T> x_final;
  ColVec<T> inv_rms_final;
  Mat<T> h_final;
};

template <class T>
inline void rms_norm(const Mat<T>& x, const Mat<T>& gain, T eps, Mat<T>& out,
                     ColVec<T>& inv_rms) {
  const auto n = x.rows();
  const auto d = x.cols();
  out.resize(n, d);
  inv_rms.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const T ms = x.row(t).squaredNorm() / static_cast<T>(d);
    const T inv = T(1) / std::sqrt(ms + eps);
    inv_rms(t) = inv;
    out.row(t) = (x.row(t) * inv).cwiseProduct(gain.row(0));
  }
}

// dy -> dx for y = x * inv_rms * gain; accumulates dgain when non-null.
template <class T>
inline Mat<T> rms_norm_backward(const Mat<T>& x, const ColVec<T>& inv_rms,
                                const Mat<T>& gain, const Mat<T>& dy, Mat<T>* dgain) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat<T> dx(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const T r = inv_rms(t);
    if (dgain != nullptr) {
      dgain->row(0) += dy.row(t).cwiseProduct(x.row(t)) * r;
    }
    const RowVec<T> dxhat = dy.row(t).cwiseProduct(gain.row(0));
    const T dot = dxhat.dot(x.row(t));
    dx.row(t) = dxhat * r - x.row(t) * (r * r * r * dot / static_cast<T>(d));
  }
  return dx;
}

// Rotates consecutive pairs inside each head by pos * base^(-2i/head_dim).
// sign = -1 applies the inverse rotation (used by the reverse pass).
template <class T>
inline void apply_rope(Mat<T>& m, const Mat<T>& cos_t, const Mat<T>& sin_t, int n_heads,
                       std::size_t pos0, T sign = T(1)) {
  const auto hd = m.cols() / n_heads;
  const auto half = hd / 2;
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    const auto pos = static_cast<Eigen::Index>(pos0) + t;
    for (int h = 0; h < n_heads; ++h) {
      T* row = m.row(t).data() + h * hd;
      for (Eigen::Index i = 0; i < half; ++i) {
        const T c = cos_t(pos, i);
        const T s = sign * sin_t(pos, i);
        const T a = row[2 * i];
        const T b = row[2 * i + 1];
        row[2 * i] = a * c - b * s;
        row[2 * i + 1] = a * s + b * c;
      }
    }
  }
}

template <class T>
inline void softmax_rows_causal(Mat<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    T mx = s(i, 0);
    for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
    T sum = 0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      s(i, j) = std::exp(s(i, j) - mx);
      sum += s(i, j);
    }
    for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= sum;
    for (Eigen::Index j = i + 1; j < s.cols(); ++j) s(i, j) = 0;
  }
}

// Runs the transformer trunk (everything up to and including the final norm)
// over `tokens`. Returns the final normed hidden states. `cache` and `trace`
// are optional sinks.
template <class T>
Mat<T> run_trunk(const BasicModel<T>& model, std::span<const TokenId> tokens,
                 ForwardCache<T>* cache, ActivationTrace* trace) {
  const ModelConfig& cfg = model.config();
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const T eps = static_cast<T>(cfg.norm_eps);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  const Mat<T>& emb = model.weight(kGlobalLayer, Block::embedding);
  Mat<T> x(n, d);
  for (Eigen::Index t = 0; t < n; ++t) x.row(t) = emb.row(tokens[static_cast<std::size_t>(t)]);

  if (cache != nullptr) cache->layers.resize(static_cast<std::size_t>(cfg.n_layers));

  Mat<T> h, gate_pre, up, act, attn_cat(n, d);
  ColVec<T> inv;
  for (int l = 1; l <= cfg.n_layers; ++l) {
    LayerCache<T>* lc = cache ? &cache->layers[static_cast<std::size_t>(l - 1)] : nullptr;
    if (lc) lc->x_in = x;

    rms_norm(x, model.weight(l, Block::norm, 0), eps, h, inv);
    Mat<T> q = h * model.weight(l, Block::attn_q);
    Mat<T> k = h * model.weight(l, Block::attn_k);
    Mat<T> v = h * model.weight(l, Block::attn_v);
    apply_rope(q, model.rope_cos(), model.rope_sin(), cfg.n_heads, 0);
    apply_rope(k, model.rope_cos(), model.rope_sin(), cfg.n_heads, 0);
    if (lc) lc->probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      Mat<T> s = (q.middleCols(hh * hd, hd) * k.middleCols(hh * hd, hd).transpose()) * scale;
      softmax_rows_causal(s);
      attn_cat.middleCols(hh * hd, hd).noalias() = s * v.middleCols(hh * hd, hd);
      if (lc) lc->probs[static_cast<std::size_t>(hh)] = std::move(s);
    }
    if (lc) {
      lc->inv_rms_attn = inv;
      lc->h_attn = h;
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->attn_cat = attn_cat;
    }
    x.noalias() += attn_cat * model.weight(l, Block::attn_o);
    if (lc) lc->x_mid = x;

    rms_norm(x, model.weight(l, Block::norm, 1), eps, h, inv);
    gate_pre.noalias() = h * model.weight(l, Block::ffn_gate);
    up.noalias() = h * model.weight(l, Block::ffn_up);
    act.resize(n, cfg.d_inter);
    for (Eigen::Index t = 0; t < n; ++t) {
      for (Eigen::Index j = 0; j < cfg.d_inter; ++j) {
        const T g = activate(gate_pre(t, j), cfg.activation);
        act(t, j) = g * up(t, j);
        if (trace) trace->set(l, static_cast<std::size_t>(t), static_cast<int>(j), g > T(0));
      }
    }
    x.noalias() += act * model.weight(l, Block::ffn_down);
    if (lc) {
      lc->inv_rms_ffn = inv;
      lc->h_ffn = h;
      lc->gate_pre = gate_pre;
      lc->up = up;
      lc->act = act;
    }
  }

  Mat<T> hf;
  rms_norm(x, model.weight(kGlobalLayer, Block::norm, 0), eps, hf, inv);
  if (cache) {
    cache->x_final = std::move(x);
    cache->inv_rms_final = inv;
    cache->h_final = hf;
  }
  return hf;
}

template <class T>
Mat<T> unembed(const BasicModel<T>& model, const Mat<T>& h) {
  if (model.tied_output()) {
    return h * model.weight(kGlobalLayer, Block::embedding).transpose();
  }
  return h * model.weight(kGlobalLayer, Block::output);
}

}  // namespace slam::detail
