// SPDX-License-Identifier: Apache-2.0

#include "slam/backprop.hpp"

#include <algorithm>
#include <cmath>

#include "forward_pass.hpp"
#include "slam/error.hpp"

namespace slam {

std::size_t TrainingExample::target_count() const {
  std::size_t n = 0;
  for (std::size_t t = 1; t < mask.size(); ++t) n += mask[t] != 0 ? 1 : 0;
  return n;
}

template <class T>
GradientBuffer<T>::GradientBuffer(const BasicModel<T>& model,
                                  std::span<const ParamRef> trainable)
    : trainable_(model.registry().size(), false), grads_(model.registry().size()) {
  for (const ParamRef& r : trainable) {
    const std::size_t i = model.index_of(r);
    if (trainable_[i]) continue;
    trainable_[i] = true;
    grads_[i].setZero(model.tensor(i).rows(), model.tensor(i).cols());
    size_ += static_cast<std::uint64_t>(grads_[i].size());
  }
}

template <class T>
void GradientBuffer<T>::zero() {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (trainable_[i]) grads_[i].setZero();
  }
}

template <class T>
T GradientBuffer<T>::squared_norm() const {
  T s = 0;
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (trainable_[i]) s += grads_[i].squaredNorm();
  }
  return s;
}

template <class T>
void GradientBuffer<T>::scale(T factor) {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (trainable_[i]) grads_[i] *= factor;
  }
}

namespace {

template <class T>
struct BackwardPlan {
  // Lowest layer whose weights need a gradient; 0 means the embedding.
  int lowest = 0;
  // Whether the sweep has to continue through the attention half of the
  // lowest layer.
  bool lowest_needs_attn = true;
  bool any = false;
};

template <class T>
BackwardPlan<T> plan_backward(const BasicModel<T>& model, const GradientBuffer<T>& g) {
  const ModelConfig& cfg = model.config();
  BackwardPlan<T> p;
  p.lowest = cfg.n_layers + 1;
  for (std::size_t i = 0; i < g.tensor_count(); ++i) {
    if (!g.is_trainable(i)) continue;
    p.any = true;
    const ParamRef& r = model.registry()[i];
    if (r.layer == kGlobalLayer) {
      if (r.block == Block::embedding) {
        p.lowest = 0;
        p.lowest_needs_attn = true;
      }
      continue;
    }
    const bool attn_half = r.block == Block::attn_q || r.block == Block::attn_k ||
                           r.block == Block::attn_v || r.block == Block::attn_o ||
                           (r.block == Block::norm && r.slot == 0);
    if (r.layer < p.lowest) {
      p.lowest = r.layer;
      p.lowest_needs_attn = attn_half;
    } else if (r.layer == p.lowest && attn_half) {
      p.lowest_needs_attn = true;
    }
  }
  return p;
}

template <class T>
void accumulate(GradientBuffer<T>& g, std::size_t index, const Mat<T>& a, const Mat<T>& b) {
  if (g.is_trainable(index)) g.grad(index).noalias() += a.transpose() * b;
}

// Reverse sweep for one sequence given d(loss)/d(h_final).
template <class T>
void backward_sequence(const BasicModel<T>& model, std::span<const TokenId> tokens,
                       const detail::ForwardCache<T>& cache, Mat<T> dh_final,
                       GradientBuffer<T>& g, const BackwardPlan<T>& plan) {
  const ModelConfig& cfg = model.config();
  const int hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  const std::size_t fn_idx = param_index(cfg, kGlobalLayer, Block::norm, 0);
  Mat<T> dx = detail::rms_norm_backward(cache.x_final, cache.inv_rms_final, model.tensor(fn_idx),
                                        dh_final,
                                        g.is_trainable(fn_idx) ? &g.grad(fn_idx) : nullptr);

  const int stop = std::max(plan.lowest, 1);
  for (int l = cfg.n_layers; l >= stop; --l) {
    const auto& lc = cache.layers[static_cast<std::size_t>(l - 1)];
    const bool last = l == plan.lowest;

    // FFN half: x_out = x_mid + (f(gate) * up) W_down
    const std::size_t i_gate = param_index(cfg, l, Block::ffn_gate);
    const std::size_t i_up = param_index(cfg, l, Block::ffn_up);
    const std::size_t i_down = param_index(cfg, l, Block::ffn_down);
    const std::size_t i_n1 = param_index(cfg, l, Block::norm, 1);
    accumulate(g, i_down, lc.act, dx);
    const bool ffn_weights_below =
        g.is_trainable(i_gate) || g.is_trainable(i_up) || g.is_trainable(i_n1);
    const bool need_dx_through_ffn = !last || plan.lowest_needs_attn;
    if (ffn_weights_below || need_dx_through_ffn) {
      const Mat<T> dact = dx * model.tensor(i_down).transpose();
      Mat<T> dgate(dact.rows(), dact.cols());
      Mat<T> dup(dact.rows(), dact.cols());
      for (Eigen::Index t = 0; t < dact.rows(); ++t) {
        for (Eigen::Index j = 0; j < dact.cols(); ++j) {
          const T z = lc.gate_pre(t, j);
          dup(t, j) = dact(t, j) * activate(z, cfg.activation);
          dgate(t, j) = dact(t, j) * lc.up(t, j) * activate_grad(z, cfg.activation);
        }
      }
      accumulate(g, i_gate, lc.h_ffn, dgate);
      accumulate(g, i_up, lc.h_ffn, dup);
      if (g.is_trainable(i_n1) || need_dx_through_ffn) {
        Mat<T> dh = dgate * model.tensor(i_gate).transpose();
        dh.noalias() += dup * model.tensor(i_up).transpose();
        dx += detail::rms_norm_backward(lc.x_mid, lc.inv_rms_ffn, model.tensor(i_n1), dh,
                                        g.is_trainable(i_n1) ? &g.grad(i_n1) : nullptr);
      }
    }
    if (last && !plan.lowest_needs_attn) return;

    // Attention half: x_mid = x_in + attn(norm(x_in)) W_o
    const std::size_t i_q = param_index(cfg, l, Block::attn_q);
    const std::size_t i_k = param_index(cfg, l, Block::attn_k);
    const std::size_t i_v = param_index(cfg, l, Block::attn_v);
    const std::size_t i_o = param_index(cfg, l, Block::attn_o);
    const std::size_t i_n0 = param_index(cfg, l, Block::norm, 0);
    accumulate(g, i_o, lc.attn_cat, dx);
    const Mat<T> dcat = dx * model.tensor(i_o).transpose();
    Mat<T> dq(dcat.rows(), dcat.cols());
    Mat<T> dk(dcat.rows(), dcat.cols());
    Mat<T> dv(dcat.rows(), dcat.cols());
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Mat<T>& p = lc.probs[static_cast<std::size_t>(h)];
      const Mat<T> dout = dcat.middleCols(h * hd, hd);
      Mat<T> dp = dout * lc.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() = p.transpose() * dout;
      for (Eigen::Index i = 0; i < dp.rows(); ++i) {
        const T rowdot = dp.row(i).dot(p.row(i));
        dp.row(i) = (p.row(i).array() * (dp.row(i).array() - rowdot)).matrix() * scale;
      }
      dq.middleCols(h * hd, hd).noalias() = dp * lc.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() = dp.transpose() * lc.q.middleCols(h * hd, hd);
    }
    detail::apply_rope(dq, model.rope_cos(), model.rope_sin(), cfg.n_heads, 0, T(-1));
    detail::apply_rope(dk, model.rope_cos(), model.rope_sin(), cfg.n_heads, 0, T(-1));
    accumulate(g, i_q, lc.h_attn, dq);
    accumulate(g, i_k, lc.h_attn, dk);
    accumulate(g, i_v, lc.h_attn, dv);
    if (last && !g.is_trainable(i_n0)) return;
    Mat<T> dh = dq * model.tensor(i_q).transpose();
    dh.noalias() += dk * model.tensor(i_k).transpose();
    dh.noalias() += dv * model.tensor(i_v).transpose();
    dx += detail::rms_norm_backward(lc.x_in, lc.inv_rms_attn, model.tensor(i_n0), dh,
                                    g.is_trainable(i_n0) ? &g.grad(i_n0) : nullptr);
    if (last) return;
  }

  if (plan.lowest == 0) {
    Mat<T>& ge = g.grad(0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      ge.row(tokens[t]) += dx.row(static_cast<Eigen::Index>(t));
    }
  }
}

}  // namespace

template <class T>
T batch_loss(const BasicModel<T>& model, std::span<const TrainingExample> batch,
             GradientBuffer<T>* grads) {
  std::size_t total_targets = 0;
  for (const TrainingExample& ex : batch) {
    if (ex.mask.size() != ex.tokens.size()) {
      throw ShapeError("training example mask length differs from token length");
    }
    total_targets += ex.target_count();
  }
  if (total_targets == 0) throw UndefinedError("batch has no target tokens");

  const ModelConfig& cfg = model.config();
  BackwardPlan<T> plan;
  if (grads != nullptr) plan = plan_backward(model, *grads);
  const bool want_grad = grads != nullptr && plan.any;
  const T inv_count = T(1) / static_cast<T>(total_targets);
  const std::size_t out_idx =
      cfg.tied_output ? 0 : param_index(cfg, kGlobalLayer, Block::output);

  T loss = 0;
  for (const TrainingExample& ex : batch) {
    const std::size_t n_targets = ex.target_count();
    if (n_targets == 0) continue;
    model.check_tokens(ex.tokens);
    // Position t predicts token t+1; only positions feeding a target matter.
    std::vector<Eigen::Index> rows;
    rows.reserve(n_targets);
    for (std::size_t t = 1; t < ex.tokens.size(); ++t) {
      if (ex.mask[t] != 0) rows.push_back(static_cast<Eigen::Index>(t - 1));
    }
    detail::ForwardCache<T> cache;
    const Mat<T> hf = detail::run_trunk(model, ex.tokens, want_grad ? &cache : nullptr, nullptr);
    Mat<T> h_sel(static_cast<Eigen::Index>(rows.size()), hf.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      h_sel.row(static_cast<Eigen::Index>(r)) = hf.row(rows[r]);
    }
    Mat<T> logits = detail::unembed(model, h_sel);
    // Softmax in place; logits becomes d(loss)/d(logits) afterwards.
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto row = logits.row(static_cast<Eigen::Index>(r));
      const TokenId target = ex.tokens[static_cast<std::size_t>(rows[r]) + 1];
      const T mx = row.maxCoeff();
      const T target_logit = row(target);
      row.array() = (row.array() - mx).exp();
      const T sum = row.sum();
      loss += std::log(sum) + mx - target_logit;
      row /= sum;
      row(target) -= T(1);
    }
    if (!want_grad) continue;
    logits *= inv_count;

    const Mat<T>& w_out = cfg.tied_output ? model.tensor(0) : model.tensor(out_idx);
    if (grads->is_trainable(out_idx)) {
      if (cfg.tied_output) {
        grads->grad(0).noalias() += logits.transpose() * h_sel;
      } else {
        grads->grad(out_idx).noalias() += h_sel.transpose() * logits;
      }
    }
    Mat<T> dh_final = Mat<T>::Zero(hf.rows(), hf.cols());
    const Mat<T> dsel = cfg.tied_output ? Mat<T>(logits * w_out) : Mat<T>(logits * w_out.transpose());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      dh_final.row(rows[r]) += dsel.row(static_cast<Eigen::Index>(r));
    }
    // Only the unembedding is trainable: nothing below the final norm needs a
    // gradient unless a norm or layer weight is in the plan.
    bool below = false;
    for (std::size_t i = 0; i < grads->tensor_count(); ++i) {
      if (grads->is_trainable(i) && !(i == out_idx && !cfg.tied_output)) below = true;
    }
    if (below) backward_sequence(model, ex.tokens, cache, std::move(dh_final), *grads, plan);
  }
  return loss * inv_count;
}

template class GradientBuffer<float>;
template class GradientBuffer<double>;
template float batch_loss<float>(const BasicModel<float>&, std::span<const TrainingExample>,
                                 GradientBuffer<float>*);
template double batch_loss<double>(const BasicModel<double>&, std::span<const TrainingExample>,
                                   GradientBuffer<double>*);

}  // namespace slam
