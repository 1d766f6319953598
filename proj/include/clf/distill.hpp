#pragma once

// Knowledge-distillation losses: temperature-softened KL divergence between
// teacher and student score matrices, cross-entropy against ground-truth
// matches, and their weighted combination.

#include <cstddef>
#include <string>

#include "clf/error.hpp"
#include "clf/geometry.hpp"
#include "clf/matching.hpp"
#include "clf/tensor.hpp"

namespace clf {

struct DistillConfig {
  double t = 5.0;    // softening temperature
  double c_d = 0.3;  // distillation-loss weight
  double c_t = 0.7;  // target-loss weight
};

inline void validate_distill_config(const DistillConfig& cfg) {
  if (!(cfg.t > 0.0))
    throw config_error("distill: temperature must be positive, got " +
                       std::to_string(cfg.t));
  if (cfg.c_d < 0.0 || cfg.c_t < 0.0)
    throw config_error("distill: loss weights must be non-negative");
  if (cfg.c_d + cfg.c_t <= 0.0)
    throw config_error("distill: at least one loss weight must be positive");
}

template <typename T>
struct LossBreakdown {
  Tensor<T> l_distill;  // scalars; live on the tape during training
  Tensor<T> l_target;
  Tensor<T> total;
};

// Softened log-probabilities: one categorical over ALL score entries.
template <typename T>
Tensor<T> soften(const Tensor<T>& s, T t) {
  if (!(t > T(0)))
    throw config_error("soften: temperature must be positive, got " +
                       std::to_string(double(t)));
  if (s.numel() == 0) throw dim_error("soften: empty score matrix");
  return log_softmax(scale(reshape(s, {s.numel()}), T(1) / t), 0);
}

// L = t^2 · Σ p_teacher · (log p_teacher − log p_student), p = softmax(S/t)
// over the flattened matrix. The teacher side is detached: its entries are
// constants and no gradient can reach whatever produced them.
template <typename T>
Tensor<T> kl_distill_loss(const Tensor<T>& s_student, const Tensor<T>& s_teacher,
                          T t) {
  if (s_student.shape() != s_teacher.shape())
    throw dim_error("kl_distill_loss: student scores " + shape_str(s_student.shape()) +
                    " vs teacher scores " + shape_str(s_teacher.shape()));
  Tensor<T> log_pt = soften(s_teacher.detach(), t);
  Tensor<T> pt = exp(log_pt);
  Tensor<T> log_ps = soften(s_student, t);
  return scale(sum_all(mul(pt, sub(log_pt, log_ps))), t * t);
}

// −(1/|M|) Σ_{(i,j)∈M} log(clamp(P(i,j), 1e-12, 1))
template <typename T>
Tensor<T> target_loss(const MatchProbability<T>& prob, const GroundTruthMatches& gt) {
  if (gt.pairs.empty())
    throw contract_error("target_loss: no ground-truth matches; "
                         "pairs with empty ground truth must be skipped upstream");
  const Tensor<T>& p = prob.p;
  if (p.rank() != 2 || p.shape()[0] != gt.n_a() || p.shape()[1] != gt.n_b())
    throw dim_error("target_loss: probability shape " + shape_str(p.shape()) +
                    " does not match ground-truth grid " +
                    std::to_string(gt.n_a()) + "x" + std::to_string(gt.n_b()));
  Tensor<T> mask = Tensor<T>::zeros(p.shape());
  for (const auto& [a, b] : gt.pairs) mask.values_mut()[a * gt.n_b() + b] = T(1);
  Tensor<T> log_p = log(clamp(p, T(1e-12), T(1)));
  return scale(sum_all(mul(log_p, mask)), T(-1) / T(gt.pairs.size()));
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& l_distill, const Tensor<T>& l_target,
                            const DistillConfig& cfg) {
  validate_distill_config(cfg);
  LossBreakdown<T> out;
  out.l_distill = l_distill;
  out.l_target = l_target;
  out.total = add(scale(l_distill, T(cfg.c_d)), scale(l_target, T(cfg.c_t)));
  return out;
}

}  // namespace clf
