// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/common.hpp"

#include <array>

namespace dglr {

inline constexpr double kBceEpsilon = 1e-7;

/// α1..α4 for prediction, graph closeness, feature and target smoothness.
struct LossWeights {
  double stsm = 1.0;
  double gc = 1.0;
  double fs = 1.0;
  double ts = 1.0;

  std::array<double, 4> as_array() const { return {stsm, gc, fs, ts}; }
  static LossWeights from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

struct LossBreakdown {
  double stsm = 0.0;
  double gc = 0.0;
  double fs = 0.0;
  double ts = 0.0;
  double total = 0.0;
  LossWeights weights;

  std::array<double, 4> raw() const { return {stsm, gc, fs, ts}; }
};

/// total = Σ α_k L_k.
double weighted_total(const std::array<double, 4>& raw, const LossWeights& weights);

/// Σ_{t in [window, end)} Σ_{i labeled} (s_i^t - ŝ_i^t)². `predictions`,
/// `labels` and `mask` are steps×N. Throws InputError if no labeled cell
/// falls in range.
double loss_stsm(const Matrix& predictions, const Matrix& labels, const Mask& mask, Index window,
                 Index end);

/// Σ_t Σ_ij BCE(A_ij, clamp(Â_ij)) against a fixed row-normalized A.
double loss_graph_closeness(const Matrix& target, const MatrixSequence& reconstructed);
double graph_closeness_step(const Matrix& target, const Matrix& reconstructed);
/// dL/dÂ for one step; zero where the clamp is active.
Matrix graph_closeness_gradient(const Matrix& target, const Matrix& reconstructed);

/// Σ_t Σ_{i≠j} Â_ij ‖x_i - x_j‖².
double loss_feature_smoothness(const MatrixSequence& reconstructed, const MatrixSequence& features);
/// ‖x_i - x_j‖² with zero diagonal: the per-step dL/dÂ, and the weights of
/// the linear form.
Matrix feature_distance_weights(const Matrix& features);

/// Σ_t Σ_{i≠j both labeled} Â_ij (s_i - s_j)². Row t of labels/mask pairs
/// with reconstructed[t].
double loss_target_smoothness(const MatrixSequence& reconstructed, const Matrix& labels,
                              const Mask& mask);
Matrix target_distance_weights(const Eigen::RowVectorXd& labels,
                               const Eigen::Matrix<bool, 1, Eigen::Dynamic>& mask);

/// α_k = 1 / (M · L_k) over the M active terms with L_k > 0, so every
/// α_k·L_k is equal and they sum to 1. Inactive terms get 0; an active term
/// with L_k = 0 gets 1.
LossWeights auto_balance_weights(const LossBreakdown& initial,
                                 const std::array<bool, 4>& active = {true, true, true, true});

}  // namespace dglr
