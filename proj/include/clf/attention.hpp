#pragma once

// Linear-attention transformer over feature grids: sinusoidal positional
// encodings, kernelized attention in O(N·d^2), and interleaved self/cross
// encoder layers with weights shared across the two views.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "clf/backbone.hpp"
#include "clf/error.hpp"
#include "clf/nn.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace clf {

constexpr int kLayerSelf = 0;
constexpr int kLayerCross = 1;

struct AttentionConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 1;
  std::size_t ffn_dim = 32;
  std::vector<int> layer_pattern = {kLayerSelf, kLayerCross, kLayerSelf, kLayerCross};
};

inline void validate_attention_config(const AttentionConfig& cfg) {
  if (cfg.d_model == 0 || cfg.d_model % 4 != 0)
    throw config_error("attention: d_model must be a positive multiple of 4, got " +
                       std::to_string(cfg.d_model));
  if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0)
    throw config_error("attention: d_model " + std::to_string(cfg.d_model) +
                       " is not divisible by n_heads " + std::to_string(cfg.n_heads));
  if (cfg.ffn_dim == 0) throw config_error("attention: ffn_dim must be positive");
  if (cfg.layer_pattern.empty())
    throw config_error("attention: layer_pattern must be non-empty");
  for (int k : cfg.layer_pattern)
    if (k != kLayerSelf && k != kLayerCross)
      throw config_error("attention: layer_pattern entries must be 0 (self) or 1 (cross)");
}

// Positive kernel feature map; phi(x) > 0 everywhere and phi(0) = 1.
template <typename T>
Tensor<T> phi(const Tensor<T>& x) {
  return add_scalar(elu(x), T(1));
}

// O(N^2) attention used as the correctness oracle: materializes the full
// similarity matrix A = phi(Q)·phi(K)^T and normalizes rows by A·1.
template <typename T>
Tensor<T> linear_attention_reference(const Tensor<T>& q, const Tensor<T>& k,
                                     const Tensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw dim_error("linear_attention: expected [heads, n, dim] inputs");
  if (q.shape()[0] != k.shape()[0] || k.shape() != v.shape() ||
      q.shape()[2] != k.shape()[2])
    throw dim_error("linear_attention: mismatched shapes " + shape_str(q.shape()) +
                    ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  Tensor<T> a = bmm(phi(q), transpose(phi(k), 1, 2));  // [h, nq, nk]
  Tensor<T> num = bmm(a, v);                           // [h, nq, dv]
  Tensor<T> den = sum(a, 2, /*keepdim=*/true);         // [h, nq, 1]
  return div(num, den);
}

// Same map computed associatively: out = phi(Q)·(sum_s phi(k_s) ⊗ v_s)
// normalized by phi(Q)·(sum_s phi(k_s)). Never forms an n×n matrix; the
// largest intermediate is the per-position stack of d×d outer products.
template <typename T>
Tensor<T> linear_attention_fast(const Tensor<T>& q, const Tensor<T>& k,
                                const Tensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw dim_error("linear_attention: expected [heads, n, dim] inputs");
  if (q.shape()[0] != k.shape()[0] || k.shape() != v.shape() ||
      q.shape()[2] != k.shape()[2])
    throw dim_error("linear_attention: mismatched shapes " + shape_str(q.shape()) +
                    ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  std::size_t h = q.shape()[0], nk = k.shape()[1], d = q.shape()[2];
  Tensor<T> pq = phi(q), pk = phi(k);
  Tensor<T> outer = bmm(reshape(pk, {h * nk, d, 1}), reshape(v, {h * nk, 1, d}));
  Tensor<T> kv = reshape(sum(reshape(outer, {h, nk, d * d}), 1), {h, d, d});
  Tensor<T> ksum = reshape(sum(pk, 1), {h, d, 1});
  Tensor<T> num = bmm(pq, kv);                          // [h, nq, d]
  Tensor<T> z = clamp_min(bmm(pq, ksum), T(1e-9));      // [h, nq, 1]
  return div(num, z);
}

// Sinusoidal cell-position code, [h*w, d] row-major over cells. Channels are
// laid out in quarters: [sin x | cos x | sin y | cos y], each quarter sweeping
// frequencies 10000^(-i/(d/4)) for i = 0..d/4-1.
template <typename T>
Tensor<T> positional_encoding(std::size_t h, std::size_t w, std::size_t d) {
  if (d == 0 || d % 4 != 0)
    throw config_error("positional_encoding: dim must be a positive multiple of 4, got " +
                       std::to_string(d));
  if (h == 0 || w == 0)
    throw dim_error("positional_encoding: empty grid");
  std::size_t quarter = d / 4;
  Tensor<T> pe = Tensor<T>::zeros({h * w, d});
  auto& out = pe.values_mut();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      T* row = out.data() + (y * w + x) * d;
      for (std::size_t i = 0; i < quarter; ++i) {
        double freq = std::pow(10000.0, -double(i) / double(quarter));
        row[i] = T(std::sin(double(x) * freq));
        row[quarter + i] = T(std::cos(double(x) * freq));
        row[2 * quarter + i] = T(std::sin(double(y) * freq));
        row[3 * quarter + i] = T(std::cos(double(y) * freq));
      }
    }
  return pe;
}

// One transformer layer. The attention message is merged back through a
// linear+norm, then a two-layer FFN over [x | merged] produces a residual
// update. Zeroed merge and ffn2 projections make the layer the identity.
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(std::size_t d_model, std::size_t n_heads, std::size_t ffn_dim, Rng& rng)
      : d_(d_model), heads_(n_heads),
        q_(d_model, d_model, rng), k_(d_model, d_model, rng), v_(d_model, d_model, rng),
        merge_(2 * d_model, d_model, rng), norm1_(d_model),
        ffn1_(2 * d_model, ffn_dim, rng), ffn2_(ffn_dim, d_model, rng), norm2_(d_model) {}

  // x: [n, d] queries; source: [m, d] keys/values (x == source for self).
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& source) const {
    if (x.rank() != 2 || source.rank() != 2 || x.shape()[1] != d_ ||
        source.shape()[1] != d_)
      throw dim_error("encoder_layer: expected [n, " + std::to_string(d_) +
                      "] inputs, got " + shape_str(x.shape()) + " and " +
                      shape_str(source.shape()));
    std::size_t n = x.shape()[0], m = source.shape()[0], dh = d_ / heads_;
    Tensor<T> qh = split_heads(q_.forward(x), n, dh);
    Tensor<T> kh = split_heads(k_.forward(source), m, dh);
    Tensor<T> vh = split_heads(v_.forward(source), m, dh);
    Tensor<T> msg = linear_attention_fast(qh, kh, vh);       // [heads, n, dh]
    Tensor<T> message = reshape(transpose(msg, 0, 1), {n, d_});
    Tensor<T> merged = norm1_.forward(merge_.forward(concat(x, message, 1)));
    Tensor<T> ffn = norm2_.forward(
        ffn2_.forward(relu(ffn1_.forward(concat(x, merged, 1)))));
    return add(x, ffn);
  }

  void zero_output_projections() {
    merge_.zero_out();
    ffn2_.zero_out();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    q_.visit(prefix + ".q", fn);
    k_.visit(prefix + ".k", fn);
    v_.visit(prefix + ".v", fn);
    merge_.visit(prefix + ".merge", fn);
    norm1_.visit(prefix + ".norm1", fn);
    ffn1_.visit(prefix + ".ffn1", fn);
    ffn2_.visit(prefix + ".ffn2", fn);
    norm2_.visit(prefix + ".norm2", fn);
  }

 private:
  Tensor<T> split_heads(const Tensor<T>& t, std::size_t n, std::size_t dh) const {
    return transpose(reshape(t, {n, heads_, dh}), 0, 1);  // [heads, n, dh]
  }

  std::size_t d_ = 0, heads_ = 1;
  LinearLayer<T> q_, k_, v_, merge_;
  LayerNormLayer<T> norm1_;
  LinearLayer<T> ffn1_, ffn2_;
  LayerNormLayer<T> norm2_;
};

template <typename T>
struct TransformedFeatures {
  Tensor<T> feat_a, feat_b;
};

// Feature transformer over two views. Positional encoding is added once to
// each view's features; layers then run per the self/cross pattern. A cross
// layer applies the SAME weights in both directions and updates both views
// from each other's pre-layer values, so swapping the inputs exactly swaps
// the outputs.
template <typename T>
class LoftrModule {
 public:
  LoftrModule() = default;
  // An empty layer_pattern is accepted here (the module degenerates to the
  // positional encoding); full-pipeline configs are vetted separately by
  // validate_attention_config, which insists on at least one layer.
  LoftrModule(const AttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
    AttentionConfig probe = cfg;
    if (probe.layer_pattern.empty()) probe.layer_pattern = {kLayerSelf};
    validate_attention_config(probe);
    for (std::size_t i = 0; i < cfg.layer_pattern.size(); ++i)
      layers_.emplace_back(cfg.d_model, cfg.n_heads, cfg.ffn_dim, rng);
  }

  const AttentionConfig& config() const { return cfg_; }
  std::vector<EncoderLayer<T>>& layers() { return layers_; }

  TransformedFeatures<T> forward(const FeatureGrid<T>& a, const FeatureGrid<T>& b) const {
    if (a.dim != cfg_.d_model || b.dim != cfg_.d_model)
      throw dim_error("loftr_module: feature dim " + std::to_string(a.dim) + "/" +
                      std::to_string(b.dim) + " does not match d_model " +
                      std::to_string(cfg_.d_model));
    Tensor<T> xa = add(a.values, positional_encoding<T>(a.height, a.width, cfg_.d_model));
    Tensor<T> xb = add(b.values, positional_encoding<T>(b.height, b.width, cfg_.d_model));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const EncoderLayer<T>& layer = layers_[i];
      if (cfg_.layer_pattern[i] == kLayerSelf) {
        xa = layer.forward(xa, xa);
        xb = layer.forward(xb, xb);
      } else {
        Tensor<T> na = layer.forward(xa, xb);
        Tensor<T> nb = layer.forward(xb, xa);
        xa = na;
        xb = nb;
      }
    }
    return {xa, xb};
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].visit(prefix + "loftr.layer" + std::to_string(i), fn);
  }

 private:
  AttentionConfig cfg_;
  std::vector<EncoderLayer<T>> layers_;
};

}  // namespace clf
