#pragma once

// Convolutional feature extractor: a strided residual pyramid that maps a
// [1, h, w] grayscale image to one feature vector per output-stride cell.

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "clf/error.hpp"
#include "clf/nn.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace clf {

struct BackboneConfig {
  std::size_t initial_dim = 8;
  std::vector<std::size_t> block_dims = {8, 16, 32, 32};
  std::size_t output_stride = 16;
};

inline void validate_backbone_config(const BackboneConfig& cfg) {
  if (cfg.initial_dim == 0) throw config_error("backbone: initial_dim must be positive");
  if (cfg.block_dims.empty()) throw config_error("backbone: block_dims must be non-empty");
  for (std::size_t d : cfg.block_dims)
    if (d == 0) throw config_error("backbone: block_dims entries must be positive");
  // Every stage halves resolution once, so the stride is fixed by the depth.
  std::size_t stride = std::size_t(1) << cfg.block_dims.size();
  if (cfg.output_stride != stride)
    throw config_error("backbone: output_stride " + std::to_string(cfg.output_stride) +
                       " does not match " + std::to_string(cfg.block_dims.size()) +
                       " stages (expected " + std::to_string(stride) + ")");
}

inline std::size_t norm_groups(std::size_t channels) {
  return std::gcd<std::size_t>(channels, 8);
}

// conv3x3(s) -> norm -> relu -> conv3x3(1) -> norm, plus a projected skip
// when shape changes; output = relu(main + skip).
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng)
      : conv1_(cin, cout, 3, stride, 1, rng),
        norm1_(cout, norm_groups(cout)),
        conv2_(cout, cout, 3, 1, 1, rng),
        norm2_(cout, norm_groups(cout)),
        projected_(stride != 1 || cin != cout) {
    if (projected_) {
      shortcut_ = Conv2dLayer<T>(cin, cout, 1, stride, 0, rng);
      shortcut_norm_ = GroupNormLayer<T>(cout, norm_groups(cout));
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> main = norm2_.forward(conv2_.forward(relu(norm1_.forward(conv1_.forward(x)))));
    Tensor<T> skip = projected_ ? shortcut_norm_.forward(shortcut_.forward(x)) : x;
    return relu(add(main, skip));
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    conv1_.visit(prefix + ".conv1", fn);
    norm1_.visit(prefix + ".norm1", fn);
    conv2_.visit(prefix + ".conv2", fn);
    norm2_.visit(prefix + ".norm2", fn);
    if (projected_) {
      shortcut_.visit(prefix + ".shortcut", fn);
      shortcut_norm_.visit(prefix + ".shortcut_norm", fn);
    }
  }

 private:
  Conv2dLayer<T> conv1_;
  GroupNormLayer<T> norm1_;
  Conv2dLayer<T> conv2_;
  GroupNormLayer<T> norm2_;
  bool projected_ = false;
  Conv2dLayer<T> shortcut_;
  GroupNormLayer<T> shortcut_norm_;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;

  // Layers register (and draw their initialization) in a fixed order:
  // stem, stages shallow to deep, final projection.
  Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    validate_backbone_config(cfg);
    stem_ = Conv2dLayer<T>(1, cfg.initial_dim, 3, 1, 1, rng);
    stem_norm_ = GroupNormLayer<T>(cfg.initial_dim, norm_groups(cfg.initial_dim));
    std::size_t cin = cfg.initial_dim;
    for (std::size_t dim : cfg.block_dims) {
      stages_.emplace_back();
      stages_.back().push_back(ResidualBlock<T>(cin, dim, 2, rng));
      stages_.back().push_back(ResidualBlock<T>(dim, dim, 1, rng));
      cin = dim;
    }
    proj_ = Conv2dLayer<T>(cin, cin, 1, 1, 0, rng);
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return cfg_.block_dims.back(); }

  // [b, 1, h, w] -> [b, feature_dim, h/stride, w/stride]
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = relu(stem_norm_.forward(stem_.forward(x)));
    for (const auto& stage : stages_)
      for (const auto& block : stage) y = block.forward(y);
    return proj_.forward(y);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    stem_.visit(prefix + "backbone.stem", fn);
    stem_norm_.visit(prefix + "backbone.stem.norm", fn);
    for (std::size_t i = 0; i < stages_.size(); ++i)
      for (std::size_t j = 0; j < stages_[i].size(); ++j)
        stages_[i][j].visit(prefix + "backbone.stage" + std::to_string(i) +
                                ".block" + std::to_string(j),
                            fn);
    proj_.visit(prefix + "backbone.proj", fn);
  }

 private:
  BackboneConfig cfg_;
  Conv2dLayer<T> stem_;
  GroupNormLayer<T> stem_norm_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  Conv2dLayer<T> proj_;
};

// One feature row per grid cell, row-major over cells: values is
// [height*width, dim] where (height, width) count cells, not pixels.
template <typename T>
struct FeatureGrid {
  std::size_t height = 0, width = 0, dim = 0;
  Tensor<T> values;
};

template <typename T>
FeatureGrid<T> extract_features(const Backbone<T>& net, const Tensor<T>& image) {
  if (image.rank() != 3 || image.shape()[0] != 1)
    throw dim_error("extract_features: expected image [1, h, w], got " +
                    shape_str(image.shape()));
  std::size_t stride = net.config().output_stride;
  std::size_t h = image.shape()[1], w = image.shape()[2];
  if (h == 0 || w == 0 || h % stride != 0 || w % stride != 0)
    throw dim_error("extract_features: image " + std::to_string(w) + "x" +
                    std::to_string(h) + " is not a multiple of " +
                    std::to_string(stride) +
                    "; pad or crop the image to a multiple of " +
                    std::to_string(stride));
  Tensor<T> y = net.forward(reshape(image, {1, 1, h, w}));
  std::size_t c = y.shape()[1], gh = y.shape()[2], gw = y.shape()[3];
  FeatureGrid<T> grid;
  grid.height = gh;
  grid.width = gw;
  grid.dim = c;
  // [1, c, gh, gw] -> [c, gh*gw] -> [gh*gw, c]
  grid.values = transpose(reshape(y, {c, gh * gw}), 0, 1);
  return grid;
}

}  // namespace clf
