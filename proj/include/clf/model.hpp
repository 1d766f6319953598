#pragma once

// Whole-model assembly: backbone + feature transformer + temperature, the
// image-pair forward pass producing a score matrix, and checkpoint I/O that
// round-trips both the weights and the architecture they belong to.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "clf/attention.hpp"
#include "clf/backbone.hpp"
#include "clf/dataio.hpp"
#include "clf/error.hpp"
#include "clf/matching.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace clf {

struct ModelConfig {
  BackboneConfig backbone;
  AttentionConfig attention;
  double tau = 0.1;
};

inline void validate_model_config(const ModelConfig& cfg) {
  validate_backbone_config(cfg.backbone);
  validate_attention_config(cfg.attention);
  if (cfg.backbone.block_dims.back() != cfg.attention.d_model)
    throw config_error("model: backbone output dim " +
                       std::to_string(cfg.backbone.block_dims.back()) +
                       " does not match attention d_model " +
                       std::to_string(cfg.attention.d_model));
  if (!(cfg.tau > 0.0)) throw config_error("model: tau must be positive");
}

// The reduced architecture this project trains at desk scale.
inline ModelConfig student_model_config() {
  ModelConfig cfg;
  cfg.backbone.initial_dim = 8;
  cfg.backbone.block_dims = {8, 16, 32, 32};
  cfg.backbone.output_stride = 16;
  cfg.attention.d_model = 32;
  cfg.attention.n_heads = 1;
  cfg.attention.ffn_dim = 32;
  cfg.attention.layer_pattern = {kLayerSelf, kLayerCross, kLayerSelf, kLayerCross};
  cfg.tau = 0.1;
  return cfg;
}

// Full-width teacher: original column widths, one extra stage repeating the
// deepest width so the teacher shares the student's output stride (and hence
// score-matrix shape) on the same images.
inline ModelConfig teacher_model_config() {
  ModelConfig cfg;
  cfg.backbone.initial_dim = 128;
  cfg.backbone.block_dims = {128, 196, 256, 256};
  cfg.backbone.output_stride = 16;
  cfg.attention.d_model = 256;
  cfg.attention.n_heads = 8;
  cfg.attention.ffn_dim = 256;
  cfg.attention.layer_pattern = {kLayerSelf, kLayerCross, kLayerSelf, kLayerCross,
                                 kLayerSelf, kLayerCross, kLayerSelf, kLayerCross};
  cfg.tau = 0.1;
  return cfg;
}

template <typename T>
struct PairScores {
  std::size_t grid_a_h = 0, grid_a_w = 0;
  std::size_t grid_b_h = 0, grid_b_w = 0;
  ScoreMatrix<T> score;  // [n_a, n_b]
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    validate_model_config(cfg);
    Rng rng(seed);
    backbone_ = Backbone<T>(cfg.backbone, rng);
    loftr_ = LoftrModule<T>(cfg.attention, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Backbone<T>& backbone() const { return backbone_; }

  FeatureGrid<T> features(const Tensor<T>& image) const {
    return extract_features(backbone_, image);
  }

  PairScores<T> forward_pair(const Tensor<T>& img_a, const Tensor<T>& img_b) const {
    FeatureGrid<T> ga = features(img_a);
    FeatureGrid<T> gb = features(img_b);
    TransformedFeatures<T> tf = loftr_.forward(ga, gb);
    PairScores<T> out;
    out.grid_a_h = ga.height;
    out.grid_a_w = ga.width;
    out.grid_b_h = gb.height;
    out.grid_b_w = gb.width;
    out.score = score_matrix(tf.feat_a, tf.feat_b, T(cfg_.tau));
    return out;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    backbone_.visit(prefix, fn);
    loftr_.visit(prefix, fn);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit("", [&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }

 private:
  ModelConfig cfg_;
  Backbone<T> backbone_;
  LoftrModule<T> loftr_;
};

// ---------------------------------------------------------------------------
// checkpoint I/O
// ---------------------------------------------------------------------------
// A checkpoint stores the architecture as f64 "meta.*" entries followed by
// every named parameter in registration order, all in one dtype.

template <typename T>
void save_model(Model<T>& model, const std::string& path) {
  WeightsMap wm;
  const ModelConfig& cfg = model.config();
  wm.add_scalar_meta("meta.backbone.initial_dim", double(cfg.backbone.initial_dim));
  Tensor<double> dims = Tensor<double>::zeros({cfg.backbone.block_dims.size()});
  for (std::size_t i = 0; i < cfg.backbone.block_dims.size(); ++i)
    dims.values_mut()[i] = double(cfg.backbone.block_dims[i]);
  wm.add("meta.backbone.block_dims", dims);
  wm.add_scalar_meta("meta.attention.n_heads", double(cfg.attention.n_heads));
  wm.add_scalar_meta("meta.attention.ffn_dim", double(cfg.attention.ffn_dim));
  Tensor<double> pattern = Tensor<double>::zeros({cfg.attention.layer_pattern.size()});
  for (std::size_t i = 0; i < cfg.attention.layer_pattern.size(); ++i)
    pattern.values_mut()[i] = double(cfg.attention.layer_pattern[i]);
  wm.add("meta.attention.layer_pattern", pattern);
  wm.add_scalar_meta("meta.tau", cfg.tau);
  model.visit("", [&](const std::string& n, Tensor<T>& t) { wm.add(n, t); });
  save_weights(wm, path);
}

inline ModelConfig config_from_weights(const WeightsMap& wm) {
  auto need = [&](const std::string& name) -> const WeightEntry& {
    const WeightEntry* e = wm.find(name);
    if (!e) throw format_error("weights file is missing " + name);
    return *e;
  };
  ModelConfig cfg;
  cfg.backbone.initial_dim =
      std::size_t(need("meta.backbone.initial_dim").as<double>()[0]);
  std::vector<double> dims = need("meta.backbone.block_dims").as<double>();
  cfg.backbone.block_dims.clear();
  for (double d : dims) cfg.backbone.block_dims.push_back(std::size_t(d));
  cfg.backbone.output_stride = std::size_t(1) << cfg.backbone.block_dims.size();
  cfg.attention.d_model = cfg.backbone.block_dims.back();
  cfg.attention.n_heads = std::size_t(need("meta.attention.n_heads").as<double>()[0]);
  cfg.attention.ffn_dim = std::size_t(need("meta.attention.ffn_dim").as<double>()[0]);
  std::vector<double> pattern = need("meta.attention.layer_pattern").as<double>();
  cfg.attention.layer_pattern.clear();
  for (double p : pattern) cfg.attention.layer_pattern.push_back(int(p));
  cfg.tau = need("meta.tau").as<double>()[0];
  return cfg;
}

// Weights dtype of the parameter entries (meta entries are always f64).
inline int weights_dtype(const WeightsMap& wm) {
  for (const auto& e : wm.entries)
    if (e.name.rfind("meta.", 0) != 0) return e.dtype;
  throw format_error("weights file holds no parameters");
}

template <typename T>
Model<T> load_model(const std::string& path) {
  WeightsMap wm = load_weights(path);
  ModelConfig cfg = config_from_weights(wm);
  Model<T> model(cfg, /*seed=*/0);

  constexpr int want_dtype = std::is_same_v<T, float> ? 0 : 1;
  std::set<std::string> used;
  std::vector<std::string> missing, mismatched;
  model.visit("", [&](const std::string& name, Tensor<T>& t) {
    const WeightEntry* e = wm.find(name);
    if (!e) {
      missing.push_back(name);
      return;
    }
    used.insert(name);
    if (e->shape != t.shape() || e->dtype != want_dtype) {
      mismatched.push_back(name + " (file " + shape_str(e->shape) +
                           (e->dtype == 0 ? " f32" : " f64") + ", model " +
                           shape_str(t.shape()) +
                           (want_dtype == 0 ? " f32" : " f64") + ")");
      return;
    }
    std::vector<T> vals = e->as<T>();
    std::copy(vals.begin(), vals.end(), t.values_mut().begin());
  });
  std::vector<std::string> extras;
  for (const auto& e : wm.entries)
    if (e.name.rfind("meta.", 0) != 0 && !used.count(e.name))
      extras.push_back(e.name);

  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!missing.empty())
    throw format_error("weights file " + path + " is missing parameters: " + join(missing));
  if (!mismatched.empty())
    throw format_error("weights file " + path + " has mismatched entries: " + join(mismatched));
  if (!extras.empty())
    throw format_error("weights file " + path + " has unknown parameters: " + join(extras));
  return model;
}

}  // namespace clf
