// SPDX-License-Identifier: Apache-2.0
//
// Straight-line scalar re-implementation of the transformer forward pass,
// used as an oracle for the Eigen implementation. Deliberately written with
// plain loops over std::vector and no shared helpers.

#pragma once

#include <cmath>
#include <vector>

#include "slam/model.hpp"

namespace slam::testing {

struct ReferenceOutput {
  std::vector<std::vector<double>> logits;                 // [t][v]
  std::vector<std::vector<std::vector<double>>> gate_pre;  // [layer-1][t][j]
};

template <class T>
ReferenceOutput reference_forward(const BasicModel<T>& m, const std::vector<TokenId>& tokens) {
  const ModelConfig& c = m.config();
  const std::size_t n = tokens.size();
  const int d = c.d_model;
  const int hd = d / c.n_heads;
  using Vec = std::vector<double>;
  auto w = [&](int layer, Block b, int slot, int r, int col) {
    return static_cast<double>(m.weight(layer, b, slot)(r, col));
  };
  auto norm = [&](const Vec& x, int layer, int slot) {
    double ms = 0;
    for (double v : x) ms += v * v;
    ms /= d;
    const double inv = 1.0 / std::sqrt(ms + c.norm_eps);
    Vec y(x.size());
    for (int i = 0; i < d; ++i) y[i] = x[i] * inv * w(layer, Block::norm, slot, 0, i);
    return y;
  };
  auto matvec = [&](const Vec& x, int layer, Block b, int cols) {
    Vec y(static_cast<std::size_t>(cols), 0.0);
    for (int j = 0; j < cols; ++j) {
      for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w(layer, b, 0, static_cast<int>(i), j);
    }
    return y;
  };
  auto rope = [&](Vec& v, std::size_t pos) {
    for (int h = 0; h < c.n_heads; ++h) {
      for (int i = 0; i < hd / 2; ++i) {
        const double ang = static_cast<double>(pos) * std::pow(c.rope_base, -2.0 * i / hd);
        const double a = v[h * hd + 2 * i];
        const double b = v[h * hd + 2 * i + 1];
        v[h * hd + 2 * i] = a * std::cos(ang) - b * std::sin(ang);
        v[h * hd + 2 * i + 1] = a * std::sin(ang) + b * std::cos(ang);
      }
    }
  };
  auto f = [&](double z) {
    if (c.activation == Activation::silu) return z / (1.0 + std::exp(-z));
    return 0.5 * z * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z)));
  };

  std::vector<Vec> x(n, Vec(d));
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < d; ++i) x[t][i] = static_cast<double>(m.weight(0, Block::embedding)(tokens[t], i));
  }
  ReferenceOutput out;
  for (int l = 1; l <= c.n_layers; ++l) {
    std::vector<Vec> q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
      const Vec h = norm(x[t], l, 0);
      q[t] = matvec(h, l, Block::attn_q, d);
      k[t] = matvec(h, l, Block::attn_k, d);
      v[t] = matvec(h, l, Block::attn_v, d);
      rope(q[t], t);
      rope(k[t], t);
    }
    std::vector<Vec> cat(n, Vec(d, 0.0));
    for (std::size_t t = 0; t < n; ++t) {
      for (int h = 0; h < c.n_heads; ++h) {
        Vec s(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0;
          for (int i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[u][h * hd + i];
          s[u] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t u = 0; u <= t; ++u) {
          for (int i = 0; i < hd; ++i) cat[t][h * hd + i] += s[u] / z * v[u][h * hd + i];
        }
      }
    }
    std::vector<Vec> gates(n);
    for (std::size_t t = 0; t < n; ++t) {
      const Vec o = matvec(cat[t], l, Block::attn_o, d);
      for (int i = 0; i < d; ++i) x[t][i] += o[i];
      const Vec h = norm(x[t], l, 1);
      const Vec g = matvec(h, l, Block::ffn_gate, c.d_inter);
      const Vec u = matvec(h, l, Block::ffn_up, c.d_inter);
      Vec a(g.size());
      for (std::size_t j = 0; j < g.size(); ++j) a[j] = f(g[j]) * u[j];
      const Vec down = matvec(a, l, Block::ffn_down, d);
      for (int i = 0; i < d; ++i) x[t][i] += down[i];
      gates[t] = g;
    }
    out.gate_pre.push_back(std::move(gates));
  }
  for (std::size_t t = 0; t < n; ++t) {
    const Vec h = norm(x[t], 0, 0);
    Vec lg(static_cast<std::size_t>(c.vocab_size), 0.0);
    for (int vv = 0; vv < c.vocab_size; ++vv) {
      for (int i = 0; i < d; ++i) {
        const double wo = c.tied_output ? static_cast<double>(m.weight(0, Block::embedding)(vv, i))
                                        : static_cast<double>(m.weight(0, Block::output)(i, vv));
        lg[vv] += h[i] * wo;
      }
    }
    out.logits.push_back(std::move(lg));
  }
  return out;
}

}  // namespace slam::testing
