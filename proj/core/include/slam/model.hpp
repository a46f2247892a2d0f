// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer with pre-norm RMS scaling, rotary attention and a
// SwiGLU feed-forward sub-layer. Every weight matrix is addressable through a
// ParamRef so that training plans can name exactly which matrices move.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slam/tensor.hpp"

namespace slam {

enum class Activation { silu, gelu };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_inter = 256;
  int vocab_size = 0;
  int max_seq_len = 256;
  std::uint64_t seed = 0;
  bool tied_output = false;
  Activation activation = Activation::silu;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  double embedding_init_std = 1.0;

  // Throws ConfigError on any invalid dimension.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Block : std::uint8_t {
  embedding,
  attn_q,
  attn_k,
  attn_v,
  attn_o,
  ffn_gate,
  ffn_up,
  ffn_down,
  norm,
  output,
};

std::string_view to_string(Block b);
Block block_from_string(std::string_view s);

// Layers are numbered from 1; layer 0 addresses model-global parameters
// (embedding, final norm, output projection).
inline constexpr int kGlobalLayer = 0;

struct ParamRef {
  int layer = kGlobalLayer;
  Block block = Block::embedding;
  // Disambiguates the two per-layer norms: 0 precedes attention, 1 precedes
  // the FFN. Always 0 for other blocks.
  int slot = 0;
  std::vector<std::size_t> shape;

  std::uint64_t size() const;
  // Stable human-readable address, e.g. "layers.3.ffn_up" or "global.output".
  std::string name() const;

  // Identity is the address (layer, block, slot); shape is derived data.
  friend bool operator==(const ParamRef& a, const ParamRef& b) {
    return a.layer == b.layer && a.block == b.block && a.slot == b.slot;
  }
  friend bool operator<(const ParamRef& a, const ParamRef& b) {
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.block != b.block) return a.block < b.block;
    return a.slot < b.slot;
  }
};

ParamRef param_ref_from_name(std::string_view name, const ModelConfig& config);

// Registry in storage order. The same enumeration backs model construction,
// checkpoint manifests and parameter accounting.
std::vector<ParamRef> enumerate_params(const ModelConfig& config);
std::uint64_t total_parameter_count(const ModelConfig& config);

struct ParamFractionReport {
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  double fraction = 0.0;
};

// Pure shape arithmetic; no weights are allocated. Duplicate refs count once.
// Throws ConfigError for a ref that does not exist in the config's registry.
ParamFractionReport count_parameters(const ModelConfig& config,
                                     std::span<const ParamRef> trainable);

// Per layer, per position: one bit per FFN neuron, set when the activated
// gate value f(x . W_gate) is strictly positive.
class ActivationTrace {
 public:
  ActivationTrace() = default;
  ActivationTrace(int n_layers, std::size_t n_tokens, int d_inter);

  int n_layers() const { return n_layers_; }
  std::size_t n_tokens() const { return n_tokens_; }
  int d_inter() const { return d_inter_; }

  bool active(int layer, std::size_t pos, int neuron) const {
    return bits_[offset(layer, pos) + static_cast<std::size_t>(neuron)] != 0;
  }
  void set(int layer, std::size_t pos, int neuron, bool on) {
    bits_[offset(layer, pos) + static_cast<std::size_t>(neuron)] = on ? 1 : 0;
  }
  std::span<const std::uint8_t> row(int layer, std::size_t pos) const {
    return {bits_.data() + offset(layer, pos), static_cast<std::size_t>(d_inter_)};
  }

 private:
  std::size_t offset(int layer, std::size_t pos) const {
    return ((static_cast<std::size_t>(layer - 1) * n_tokens_) + pos) *
           static_cast<std::size_t>(d_inter_);
  }

  int n_layers_ = 0;
  std::size_t n_tokens_ = 0;
  int d_inter_ = 0;
  std::vector<std::uint8_t> bits_;
};

template <class T>
T activate(T z, Activation a);
template <class T>
T activate_grad(T z, Activation a);

// [f(x W_gate) * (x W_up)] W_down for a single row vector.
template <class T>
RowVec<T> ffn_forward(const RowVec<T>& x, const Mat<T>& w_gate, const Mat<T>& w_up,
                      const Mat<T>& w_down, Activation act = Activation::silu);

namespace detail {
struct uninitialized_t {};
}  // namespace detail

template <class T>
class BasicModel {
 public:
  // Deterministic initialisation from config.seed. Throws ConfigError.
  explicit BasicModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamRef>& registry() const { return refs_; }
  std::uint64_t parameter_count() const;

  // Throws ConfigError if the address is not part of this model.
  std::size_t index_of(const ParamRef& ref) const;
  Mat<T>& tensor(std::size_t index) { return tensors_[index]; }
  const Mat<T>& tensor(std::size_t index) const { return tensors_[index]; }
  Mat<T>& param(const ParamRef& ref) { return tensors_[index_of(ref)]; }
  const Mat<T>& param(const ParamRef& ref) const { return tensors_[index_of(ref)]; }
  Mat<T>& weight(int layer, Block block, int slot = 0);
  const Mat<T>& weight(int layer, Block block, int slot = 0) const;

  // Unembedding as [d_model x vocab]; resolves to the embedding transpose
  // when tied.
  bool tied_output() const { return config_.tied_output; }

  struct Output {
    Mat<T> logits;  // [n_tokens x vocab]
    std::optional<ActivationTrace> trace;
  };

  // Throws DataError on empty input, out-of-range ids or over-length input.
  Output forward(std::span<const TokenId> tokens, bool capture = false) const;
  void check_tokens(std::span<const TokenId> tokens) const;

  bool all_finite() const;

  template <class U>
  BasicModel<U> cast() const {
    BasicModel<U> out(config_, detail::uninitialized_t{});
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      out.tensors_[i] = tensors_[i].template cast<U>();
    }
    return out;
  }

  // Rotary tables, [max_seq_len x head_dim/2].
  const Mat<T>& rope_cos() const { return rope_cos_; }
  const Mat<T>& rope_sin() const { return rope_sin_; }

 private:
  template <class U>
  friend class BasicModel;
  BasicModel(ModelConfig config, detail::uninitialized_t);
  void allocate();

  ModelConfig config_;
  std::vector<ParamRef> refs_;
  std::vector<Mat<T>> tensors_;
  Mat<T> rope_cos_;
  Mat<T> rope_sin_;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

// Storage index of (layer, block, slot) in registry order.
std::size_t param_index(const ModelConfig& config, int layer, Block block, int slot = 0);

// Mean negative log-likelihood of targets[i] under softmax(logits row i),
// over rows with mask[i] != 0. Throws UndefinedError for an empty mask.
template <class T>
T loss_nll(const Mat<T>& logits, std::span<const TokenId> targets,
           std::span<const std::uint8_t> mask);

// Checksum over the float32 little-endian bytes of the selected tensors, in
// registry order. An empty selection checksums every tensor.
std::uint64_t parameter_checksum(const Model& model,
                                 std::span<const ParamRef> only = {});

}  // namespace slam
