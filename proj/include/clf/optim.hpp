#pragma once

// AdamW with decoupled weight decay and the stepped learning-rate schedule.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "clf/error.hpp"
#include "clf/tensor.hpp"

namespace clf {

struct TrainConfig {
  double lr0 = 1e-3;
  // As published: the rate is multiplied by 1e-3 every 15 epochs, which
  // effectively freezes training after the first decay. Override in configs
  // that train past epoch 14 (the experiments here use 0.1).
  double lr_gamma = 1e-3;
  std::size_t lr_step_epochs = 15;
  std::size_t micro_batch = 4;
  std::size_t accum_steps = 8;
  std::size_t epoch_pairs = 5000;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double depth_tol = 0.02;      // relative depth-consistency gate for ground truth
  std::size_t ckpt_every = 1;   // epochs between checkpoints
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.lr0 > 0.0)) throw config_error("train: lr0 must be positive");
  if (!(cfg.lr_gamma > 0.0)) throw config_error("train: lr_gamma must be positive");
  if (cfg.lr_step_epochs == 0) throw config_error("train: lr_step_epochs must be >= 1");
  if (cfg.micro_batch == 0) throw config_error("train: micro_batch must be >= 1");
  if (cfg.accum_steps == 0) throw config_error("train: accum_steps must be >= 1");
  if (cfg.epoch_pairs == 0) throw config_error("train: epoch_pairs must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw config_error("train: betas must lie in [0, 1)");
  if (!(cfg.eps > 0.0)) throw config_error("train: eps must be positive");
  if (cfg.weight_decay < 0.0) throw config_error("train: weight_decay must be >= 0");
  if (!(cfg.depth_tol > 0.0)) throw config_error("train: depth_tol must be positive");
  if (cfg.ckpt_every == 0) throw config_error("train: ckpt_every must be >= 1");
}

// lr(epoch) = lr0 * gamma^floor(epoch / step)
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.lr_gamma, double(epoch / cfg.lr_step_epochs));
}

// Decoupled-decay AdamW. Update order per parameter scalar:
//   p *= 1 - lr*wd;  m,v updated;  p -= lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, const TrainConfig& cfg)
      : cfg_(cfg) {
    for (auto& [name, t] : params) {
      if (!t.requires_grad())
        throw contract_error("adamw: parameter " + name + " does not require grad");
      slots_.push_back({name, t, std::vector<T>(t.numel(), T(0)),
                        std::vector<T>(t.numel(), T(0))});
    }
  }

  std::size_t step_count() const { return step_; }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void step(double lr) {
    ++step_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(step_));
    const double bc2 = 1.0 - std::pow(b2, double(step_));
    for (auto& s : slots_) {
      const auto& g = s.param.grad();
      auto& p = s.param.values_mut();
      for (std::size_t i = 0; i < p.size(); ++i) {
        double gi = double(g[i]);
        if (!std::isfinite(gi))
          throw numeric_error("adamw: non-finite gradient in " + s.name +
                              " at index " + std::to_string(i));
        p[i] = T(double(p[i]) * (1.0 - lr * cfg_.weight_decay));
        s.m[i] = T(b1 * double(s.m[i]) + (1.0 - b1) * gi);
        s.v[i] = T(b2 * double(s.v[i]) + (1.0 - b2) * gi * gi);
        double m_hat = double(s.m[i]) / bc1;
        double v_hat = double(s.v[i]) / bc2;
        p[i] = T(double(p[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    Tensor<T> param;  // shares storage with the model
    std::vector<T> m, v;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t step_ = 0;
};

}  // namespace clf
