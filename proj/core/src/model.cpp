// SPDX-License-Identifier: Apache-2.0

#include "slam/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <set>

#include "forward_pass.hpp"
#include "slam/error.hpp"

namespace slam {
namespace {

constexpr std::array<std::string_view, 10> kBlockNames = {
    "embedding", "attn_q",   "attn_k",  "attn_v",   "attn_o",
    "ffn_gate",  "ffn_up",   "ffn_down", "norm",    "output"};

// Per-layer storage order.
constexpr std::array<std::pair<Block, int>, 9> kLayerLayout = {{
    {Block::norm, 0},
    {Block::attn_q, 0},
    {Block::attn_k, 0},
    {Block::attn_v, 0},
    {Block::attn_o, 0},
    {Block::norm, 1},
    {Block::ffn_gate, 0},
    {Block::ffn_up, 0},
    {Block::ffn_down, 0},
}};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::size_t> shape_of(const ModelConfig& c, int layer, Block b) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto di = static_cast<std::size_t>(c.d_inter);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  switch (b) {
    case Block::embedding: return {v, d};
    case Block::attn_q:
    case Block::attn_k:
    case Block::attn_v:
    case Block::attn_o: return {d, d};
    case Block::ffn_gate:
    case Block::ffn_up: return {d, di};
    case Block::ffn_down: return {di, d};
    case Block::norm: return {d};
    case Block::output: return {d, v};
  }
  (void)layer;
  return {};
}

}  // namespace

std::string_view to_string(Activation a) {
  return a == Activation::silu ? "silu" : "gelu";
}

Activation activation_from_string(std::string_view s) {
  if (s == "silu") return Activation::silu;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(d_inter >= 1, "d_inter must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(max_seq_len >= 1, "max_seq_len must be >= 1");
  require(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) +
                                      ") is not divisible by n_heads (" +
                                      std::to_string(n_heads) + ")");
  // Rotary embedding rotates coordinate pairs inside each head.
  require(head_dim() % 2 == 0, "head dimension must be even for rotary attention");
  require(rope_base > 1.0, "rope_base must be > 1");
  require(embedding_init_std > 0.0, "embedding_init_std must be > 0");
  require(norm_eps > 0.0, "norm_eps must be > 0");
}

std::string_view to_string(Block b) { return kBlockNames[static_cast<std::size_t>(b)]; }

Block block_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kBlockNames.size(); ++i) {
    if (kBlockNames[i] == s) return static_cast<Block>(i);
  }
  throw ConfigError("unknown parameter block '" + std::string(s) + "'");
}

std::uint64_t ParamRef::size() const {
  std::uint64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string ParamRef::name() const {
  std::string out = layer == kGlobalLayer ? "global" : "layers." + std::to_string(layer);
  out += '.';
  out += to_string(block);
  if (block == Block::norm && layer != kGlobalLayer) out += "." + std::to_string(slot);
  return out;
}

ParamRef param_ref_from_name(std::string_view name, const ModelConfig& config) {
  for (const ParamRef& r : enumerate_params(config)) {
    if (r.name() == name) return r;
  }
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

std::vector<ParamRef> enumerate_params(const ModelConfig& c) {
  std::vector<ParamRef> refs;
  refs.reserve(static_cast<std::size_t>(c.n_layers) * kLayerLayout.size() + 3);
  refs.push_back({kGlobalLayer, Block::embedding, 0, shape_of(c, 0, Block::embedding)});
  for (int l = 1; l <= c.n_layers; ++l) {
    for (auto [b, slot] : kLayerLayout) refs.push_back({l, b, slot, shape_of(c, l, b)});
  }
  refs.push_back({kGlobalLayer, Block::norm, 0, shape_of(c, 0, Block::norm)});
  if (!c.tied_output) {
    refs.push_back({kGlobalLayer, Block::output, 0, shape_of(c, 0, Block::output)});
  }
  return refs;
}

std::uint64_t total_parameter_count(const ModelConfig& config) {
  std::uint64_t n = 0;
  for (const ParamRef& r : enumerate_params(config)) n += r.size();
  return n;
}

std::size_t param_index(const ModelConfig& c, int layer, Block block, int slot) {
  const auto per_layer = kLayerLayout.size();
  if (layer == kGlobalLayer) {
    const std::size_t tail = 1 + static_cast<std::size_t>(c.n_layers) * per_layer;
    switch (block) {
      case Block::embedding: return 0;
      case Block::norm: return tail;
      case Block::output:
        if (!c.tied_output) return tail + 1;
        break;
      default: break;
    }
    throw ConfigError("no global parameter block '" + std::string(to_string(block)) + "'");
  }
  if (layer < 1 || layer > c.n_layers) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range 1.." +
                      std::to_string(c.n_layers));
  }
  for (std::size_t i = 0; i < per_layer; ++i) {
    if (kLayerLayout[i].first == block && kLayerLayout[i].second == slot) {
      return 1 + static_cast<std::size_t>(layer - 1) * per_layer + i;
    }
  }
  throw ConfigError("no per-layer parameter block '" + std::string(to_string(block)) +
                    "' slot " + std::to_string(slot));
}

ParamFractionReport count_parameters(const ModelConfig& config,
                                     std::span<const ParamRef> trainable) {
  const auto refs = enumerate_params(config);
  ParamFractionReport rep;
  for (const ParamRef& r : refs) rep.total += r.size();
  std::set<ParamRef> seen;
  for (const ParamRef& want : trainable) {
    auto it = std::find(refs.begin(), refs.end(), want);
    if (it == refs.end()) {
      throw ConfigError("training plan refers to unknown parameter '" + want.name() + "'");
    }
    if (seen.insert(*it).second) rep.trainable += it->size();
  }
  rep.fraction = rep.total == 0 ? 0.0
                                : static_cast<double>(rep.trainable) /
                                      static_cast<double>(rep.total);
  return rep;
}

ActivationTrace::ActivationTrace(int n_layers, std::size_t n_tokens, int d_inter)
    : n_layers_(n_layers),
      n_tokens_(n_tokens),
      d_inter_(d_inter),
      bits_(static_cast<std::size_t>(n_layers) * n_tokens * static_cast<std::size_t>(d_inter),
            0) {}

template <class T>
T activate(T z, Activation a) {
  if (a == Activation::silu) return z / (T(1) + std::exp(-z));
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  return T(0.5) * z * (T(1) + std::tanh(c * (z + T(0.044715) * z * z * z)));
}

template <class T>
T activate_grad(T z, Activation a) {
  if (a == Activation::silu) {
    const T s = T(1) / (T(1) + std::exp(-z));
    return s * (T(1) + z * (T(1) - s));
  }
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = c * (z + T(0.044715) * z * z * z);
  const T th = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * z * z);
  return T(0.5) * (T(1) + th) + T(0.5) * z * (T(1) - th * th) * du;
}

template <class T>
RowVec<T> ffn_forward(const RowVec<T>& x, const Mat<T>& w_gate, const Mat<T>& w_up,
                      const Mat<T>& w_down, Activation act) {
  if (w_gate.rows() != x.cols() || w_up.rows() != x.cols() || w_gate.cols() != w_up.cols() ||
      w_down.rows() != w_up.cols() || w_down.cols() != x.cols()) {
    throw ShapeError("ffn_forward: inconsistent shapes (x " + std::to_string(x.cols()) +
                     ", gate " + std::to_string(w_gate.rows()) + "x" +
                     std::to_string(w_gate.cols()) + ", up " + std::to_string(w_up.rows()) +
                     "x" + std::to_string(w_up.cols()) + ", down " +
                     std::to_string(w_down.rows()) + "x" + std::to_string(w_down.cols()) + ")");
  }
  RowVec<T> g = x * w_gate;
  const RowVec<T> u = x * w_up;
  for (Eigen::Index j = 0; j < g.cols(); ++j) g(j) = activate(g(j), act) * u(j);
  return g * w_down;
}

template <class T>
BasicModel<T>::BasicModel(ModelConfig config, detail::uninitialized_t) : config_(std::move(config)) {
  config_.validate();
  allocate();
}

template <class T>
void BasicModel<T>::allocate() {
  refs_ = enumerate_params(config_);
  tensors_.resize(refs_.size());
  for (std::size_t i = 0; i < refs_.size(); ++i) {
    const auto& s = refs_[i].shape;
    if (s.size() == 1) {
      tensors_[i].setZero(1, static_cast<Eigen::Index>(s[0]));
    } else {
      tensors_[i].setZero(static_cast<Eigen::Index>(s[0]), static_cast<Eigen::Index>(s[1]));
    }
  }
  const int half = config_.head_dim() / 2;
  rope_cos_.resize(config_.max_seq_len, half);
  rope_sin_.resize(config_.max_seq_len, half);
  for (int p = 0; p < config_.max_seq_len; ++p) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(config_.rope_base, -2.0 * i / config_.head_dim());
      rope_cos_(p, i) = static_cast<T>(std::cos(p * freq));
      rope_sin_(p, i) = static_cast<T>(std::sin(p * freq));
    }
  }
}

template <class T>
BasicModel<T>::BasicModel(ModelConfig config) : BasicModel(std::move(config), detail::uninitialized_t{}) {
  const double d = config_.d_model;
  const double di = config_.d_inter;
  const double depth = 2.0 * config_.n_layers;
  for (std::size_t i = 0; i < refs_.size(); ++i) {
    const ParamRef& r = refs_[i];
    double stddev = 0.0;
    switch (r.block) {
      case Block::norm: tensors_[i].setOnes(); continue;
      case Block::embedding: stddev = config_.embedding_init_std; break;
      case Block::attn_q:
      case Block::attn_k:
      case Block::attn_v:
      case Block::ffn_gate:
      case Block::ffn_up:
      case Block::output: stddev = 1.0 / std::sqrt(d); break;
      case Block::attn_o: stddev = 1.0 / std::sqrt(d * depth); break;
      case Block::ffn_down: stddev = 1.0 / std::sqrt(di * depth); break;
    }
    std::mt19937_64 rng(splitmix64(config_.seed ^ splitmix64(i + 1)));
    std::normal_distribution<double> dist(0.0, stddev);
    Mat<T>& m = tensors_[i];
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(dist(rng));
  }
}

template <class T>
std::uint64_t BasicModel<T>::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::uint64_t>(t.size());
  return n;
}

template <class T>
std::size_t BasicModel<T>::index_of(const ParamRef& ref) const {
  return param_index(config_, ref.layer, ref.block, ref.slot);
}

template <class T>
Mat<T>& BasicModel<T>::weight(int layer, Block block, int slot) {
  return tensors_[param_index(config_, layer, block, slot)];
}

template <class T>
const Mat<T>& BasicModel<T>::weight(int layer, Block block, int slot) const {
  return tensors_[param_index(config_, layer, block, slot)];
}

template <class T>
void BasicModel<T>::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw DataError("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
    throw DataError("forward: sequence length " + std::to_string(tokens.size()) +
                    " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw DataError("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(config_.vocab_size));
    }
  }
}

template <class T>
typename BasicModel<T>::Output BasicModel<T>::forward(std::span<const TokenId> tokens,
                                                      bool capture) const {
  check_tokens(tokens);
  Output out;
  if (capture) out.trace.emplace(config_.n_layers, tokens.size(), config_.d_inter);
  const Mat<T> hf = detail::run_trunk<T>(*this, tokens, nullptr, capture ? &*out.trace : nullptr);
  out.logits = detail::unembed(*this, hf);
  return out;
}

template <class T>
bool BasicModel<T>::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Mat<T>& m) { return m.allFinite(); });
}

template <class T>
T loss_nll(const Mat<T>& logits, std::span<const TokenId> targets,
           std::span<const std::uint8_t> mask) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()) || mask.size() != targets.size()) {
    throw ShapeError("loss_nll: logits rows, targets and mask must have equal length");
  }
  T total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (mask[i] == 0) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(targets[i]);
    ++count;
  }
  if (count == 0) throw UndefinedError("loss_nll: empty loss mask");
  return total / static_cast<T>(count);
}

std::uint64_t parameter_checksum(const Model& model, std::span<const ParamRef> only) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto& refs = model.registry();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), refs[i]) == only.end()) continue;
    const Mat<float>& m = model.tensor(i);
    static_assert(std::endian::native == std::endian::little);
    h = fnv1a(std::as_bytes(std::span<const float>(m.data(), static_cast<std::size_t>(m.size()))),
              h);
  }
  return h;
}

template class BasicModel<float>;
template class BasicModel<double>;
template float activate<float>(float, Activation);
template double activate<double>(double, Activation);
template float activate_grad<float>(float, Activation);
template double activate_grad<double>(double, Activation);
template RowVec<float> ffn_forward<float>(const RowVec<float>&, const Mat<float>&,
                                          const Mat<float>&, const Mat<float>&, Activation);
template RowVec<double> ffn_forward<double>(const RowVec<double>&, const Mat<double>&,
                                            const Mat<double>&, const Mat<double>&, Activation);
template float loss_nll<float>(const Mat<float>&, std::span<const TokenId>,
                               std::span<const std::uint8_t>);
template double loss_nll<double>(const Mat<double>&, std::span<const TokenId>,
                                 std::span<const std::uint8_t>);

}  // namespace slam
