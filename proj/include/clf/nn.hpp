#pragma once

// Small trainable layers shared by the backbone and the transformer. Each
// layer exposes visit(prefix, fn) enumerating (name, tensor&) pairs in a
// stable order; initialization draws from the caller's Rng in that order.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>

#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace clf {

// 2-D convolution without bias (normalization layers supply the offsets).
template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t cin, std::size_t cout, std::size_t k,
              std::size_t stride, std::size_t pad, Rng& rng)
      : stride_(stride), pad_(pad), w_(Shape{cout, cin, k, k}) {
    w_.fill_he_uniform(rng, cin * k * k);
    w_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, w_, stride_, pad_);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".w", w_);
  }

 private:
  std::size_t stride_ = 1, pad_ = 0;
  Tensor<T> w_;
};

// Affine map x·W + b with W stored [in, out].
template <typename T>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng)
      : w_(Shape{in, out}), b_(Shape{out}) {
    w_.fill_he_uniform(rng, in);
    b_.set_requires_grad(true);
    w_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add(matmul(x, w_), b_);
  }

  void zero_out() {
    std::fill(w_.values_mut().begin(), w_.values_mut().end(), T(0));
    std::fill(b_.values_mut().begin(), b_.values_mut().end(), T(0));
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".w", w_);
    fn(prefix + ".b", b_);
  }

 private:
  Tensor<T> w_, b_;
};

// Learnable scale/offset around group_norm (per-sample, batch-independent).
template <typename T>
class GroupNormLayer {
 public:
  GroupNormLayer() = default;
  GroupNormLayer(std::size_t channels, std::size_t groups)
      : groups_(groups), gamma_(Tensor<T>::ones({channels})),
        beta_(Tensor<T>::zeros({channels})) {
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return group_norm(x, gamma_, beta_, groups_);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".gamma", gamma_);
    fn(prefix + ".beta", beta_);
  }

 private:
  std::size_t groups_ = 1;
  Tensor<T> gamma_, beta_;
};

template <typename T>
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  explicit LayerNormLayer(std::size_t dim)
      : gamma_(Tensor<T>::ones({dim})), beta_(Tensor<T>::zeros({dim})) {
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return layer_norm(x, gamma_, beta_);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".gamma", gamma_);
    fn(prefix + ".beta", beta_);
  }

 private:
  Tensor<T> gamma_, beta_;
};

// Number of learnable scalars reachable through visit().
template <typename T, typename Module>
std::size_t param_count(Module& m) {
  std::size_t n = 0;
  m.visit("", [&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

}  // namespace clf
