// SPDX-License-Identifier: Apache-2.0
#include "dglr/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dglr {

double weighted_total(const std::array<double, 4>& raw, const LossWeights& weights) {
  const auto a = weights.as_array();
  double total = 0.0;
  for (int k = 0; k < 4; ++k) total += a[k] * raw[k];
  return total;
}

double loss_stsm(const Matrix& predictions, const Matrix& labels, const Mask& mask, Index window,
                 Index end) {
  double sum = 0.0;
  Index count = 0;
  for (Index t = window; t < end; ++t)
    for (Index i = 0; i < labels.cols(); ++i)
      if (mask(t, i)) {
        const double r = labels(t, i) - predictions(t, i);
        sum += r * r;
        ++count;
      }
  if (count == 0) throw InputError("no labeled cell in the prediction range; model is untrainable");
  return sum;
}

namespace {

void check_probability_matrix(const Matrix& m, const char* what) {
  constexpr double slack = 1e-9;
  if (!m.allFinite() || m.minCoeff() < -slack || m.maxCoeff() > 1.0 + slack)
    throw InputError(std::string(what) + " has entries outside [0, 1]");
}

double clamp_probability(double p) { return std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon); }

}  // namespace

double graph_closeness_step(const Matrix& target, const Matrix& reconstructed) {
  check_probability_matrix(target, "graph closeness target");
  check_probability_matrix(reconstructed, "reconstructed adjacency");
  double sum = 0.0;
  for (Index i = 0; i < target.rows(); ++i)
    for (Index j = 0; j < target.cols(); ++j) {
      const double p = clamp_probability(reconstructed(i, j));
      const double a = target(i, j);
      sum -= a * std::log(p) + (1.0 - a) * std::log(1.0 - p);
    }
  return sum;
}

double loss_graph_closeness(const Matrix& target, const MatrixSequence& reconstructed) {
  double sum = 0.0;
  for (const auto& r : reconstructed) sum += graph_closeness_step(target, r);
  return sum;
}

Matrix graph_closeness_gradient(const Matrix& target, const Matrix& reconstructed) {
  Matrix g = Matrix::Zero(target.rows(), target.cols());
  for (Index i = 0; i < target.rows(); ++i)
    for (Index j = 0; j < target.cols(); ++j) {
      const double p = reconstructed(i, j);
      if (p <= kBceEpsilon || p >= 1.0 - kBceEpsilon) continue;
      const double a = target(i, j);
      g(i, j) = -a / p + (1.0 - a) / (1.0 - p);
    }
  return g;
}

Matrix feature_distance_weights(const Matrix& features) {
  const Index n = features.rows();
  Matrix w = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) w(i, j) = (features.row(i) - features.row(j)).squaredNorm();
  return w;
}

double loss_feature_smoothness(const MatrixSequence& reconstructed, const MatrixSequence& features) {
  double sum = 0.0;
  for (std::size_t t = 0; t < reconstructed.size(); ++t)
    sum += reconstructed[t].cwiseProduct(feature_distance_weights(features[t])).sum();
  return sum;
}

Matrix target_distance_weights(const Eigen::RowVectorXd& labels,
                               const Eigen::Matrix<bool, 1, Eigen::Dynamic>& mask) {
  const Index n = labels.size();
  Matrix w = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    if (!mask(i)) continue;
    for (Index j = 0; j < n; ++j) {
      if (i == j || !mask(j)) continue;
      const double d = labels(i) - labels(j);
      w(i, j) = d * d;
    }
  }
  return w;
}

double loss_target_smoothness(const MatrixSequence& reconstructed, const Matrix& labels,
                              const Mask& mask) {
  double sum = 0.0;
  for (std::size_t t = 0; t < reconstructed.size(); ++t) {
    const auto row = static_cast<Index>(t);
    sum += reconstructed[t].cwiseProduct(target_distance_weights(labels.row(row), mask.row(row))).sum();
  }
  return sum;
}

LossWeights auto_balance_weights(const LossBreakdown& initial, const std::array<bool, 4>& active) {
  const auto raw = initial.raw();
  int balanced = 0;
  for (int k = 0; k < 4; ++k)
    if (active[k] && raw[k] > 0.0) ++balanced;
  std::array<double, 4> alpha{0.0, 0.0, 0.0, 0.0};
  for (int k = 0; k < 4; ++k) {
    if (!active[k]) continue;
    // Every balanced product α_k·L_k equals 1 / balanced, so they sum to 1.
    alpha[k] = raw[k] > 0.0 ? 1.0 / (static_cast<double>(balanced) * raw[k]) : 1.0;
  }
  return LossWeights::from_array(alpha);
}

}  // namespace dglr
