#pragma once

// Coarse matching head: temperature-scaled similarity scores, dual-softmax
// match probabilities, mutual-nearest-neighbor match extraction, and the
// mean-absolute-error metric against ground truth.

#include <cstddef>
#include <string>
#include <vector>

#include "clf/error.hpp"
#include "clf/geometry.hpp"
#include "clf/tensor.hpp"

namespace clf {

template <typename T>
struct ScoreMatrix {
  Tensor<T> s;  // [n_a, n_b]
  T tau = T(0.1);
};

template <typename T>
struct MatchProbability {
  Tensor<T> p;  // [n_a, n_b], entries in [0, 1]
};

struct Match {
  std::size_t cell_a = 0, cell_b = 0;
  double confidence = 0.0;
};

struct MatchSet {
  std::vector<Match> matches;
  double threshold = 0.2;
};

// S = featA · featB^T / tau
template <typename T>
ScoreMatrix<T> score_matrix(const Tensor<T>& feat_a, const Tensor<T>& feat_b,
                            T tau) {
  if (!(tau > T(0)))
    throw config_error("score_matrix: tau must be positive, got " +
                       std::to_string(double(tau)));
  if (feat_a.rank() != 2 || feat_b.rank() != 2 ||
      feat_a.shape()[1] != feat_b.shape()[1])
    throw dim_error("score_matrix: expected [n, d] features with equal d, got " +
                    shape_str(feat_a.shape()) + " and " + shape_str(feat_b.shape()));
  ScoreMatrix<T> out;
  out.tau = tau;
  out.s = scale(matmul(feat_a, transpose(feat_b, 0, 1)), T(1) / tau);
  return out;
}

// P(i,j) = softmax_j(S(i,·)) · softmax_i(S(·,j)). Each entry is bounded by
// both of its softmax factors, so rows and columns each carry mass <= 1.
template <typename T>
MatchProbability<T> dual_softmax(const ScoreMatrix<T>& score) {
  if (score.s.rank() != 2)
    throw dim_error("dual_softmax: expected a [n_a, n_b] score matrix, got " +
                    shape_str(score.s.shape()));
  MatchProbability<T> out;
  out.p = mul(softmax(score.s, 1), softmax(score.s, 0));
  return out;
}

// Keep cells with P >= threshold; with mnn, additionally require (i, j) to be
// mutual row/column argmaxes. Argmax ties break toward the smaller index.
template <typename T>
MatchSet extract_matches(const MatchProbability<T>& prob, double threshold,
                         bool mnn = true) {
  if (!(threshold > 0.0) || !(threshold < 1.0))
    throw contract_error("extract_matches: threshold must lie in (0, 1), got " +
                         std::to_string(threshold));
  const Tensor<T>& p = prob.p;
  if (p.rank() != 2)
    throw dim_error("extract_matches: expected [n_a, n_b] probabilities");
  std::size_t na = p.shape()[0], nb = p.shape()[1];
  const auto& v = p.values();

  std::vector<std::size_t> row_best(na, 0), col_best(nb, 0);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 1; j < nb; ++j)
      if (v[i * nb + j] > v[i * nb + row_best[i]]) row_best[i] = j;
  for (std::size_t j = 0; j < nb; ++j)
    for (std::size_t i = 1; i < na; ++i)
      if (v[i * nb + j] > v[col_best[j] * nb + j]) col_best[j] = i;

  MatchSet out;
  out.threshold = threshold;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      double conf = double(v[i * nb + j]);
      if (conf < threshold) continue;
      if (mnn && (row_best[i] != j || col_best[j] != i)) continue;
      out.matches.push_back({i, j, conf});
    }
  return out;
}

// Mean over all n_a*n_b cells of |P(i,j) - G(i,j)|.
template <typename T>
double mae(const MatchProbability<T>& prob, const GroundTruthMatches& gt) {
  const Tensor<T>& p = prob.p;
  if (p.rank() != 2 || p.shape()[0] != gt.n_a() || p.shape()[1] != gt.n_b())
    throw dim_error("mae: probability shape " + shape_str(p.shape()) +
                    " does not match ground-truth grid " +
                    std::to_string(gt.n_a()) + "x" + std::to_string(gt.n_b()));
  if (p.numel() == 0) throw dim_error("mae: empty probability matrix");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    acc += std::abs(double(p.values()[i]) - double(gt.dense[i]));
  return acc / double(p.numel());
}

}  // namespace clf
