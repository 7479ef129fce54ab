// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/common.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

namespace dglr {

/// Adjacency fed to the GNN at every training step, plus the static
/// distance graph it started from.
struct TemporalGraph {
  /// Row-normalized threshold graph with self-loops.
  Matrix initial_adjacency;
  /// One row-stochastic matrix per training step.
  MatrixSequence current_adjacency;
  /// Pairs allowed to carry a reconstructed edge.
  Mask cutoff_mask;
  double threshold_km = 0.0;

  Index num_nodes() const { return initial_adjacency.rows(); }
  Index num_steps() const { return static_cast<Index>(current_adjacency.size()); }
  /// Steps past the end reuse the last training-step graph.
  const Matrix& adjacency_at(Index t) const {
    return current_adjacency[std::min(t, num_steps() - 1)];
  }
};

/// Divides each row by its sum. Rows must have a positive sum.
template <typename Derived>
MatrixX<typename Derived::Scalar> row_normalize(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar sum = out.row(i).sum();
    if (!(sum > Scalar(0))) throw NumericError("row " + std::to_string(i) + " has no positive mass");
    out.row(i) /= sum;
  }
  return out;
}

/// ReLU(H Hᵀ) with entries outside `allowed` zeroed. Symmetric whenever
/// `allowed` is.
template <typename Derived>
MatrixX<typename Derived::Scalar> reconstruct_unnormalized(const Eigen::MatrixBase<Derived>& embeddings,
                                                           const Mask& allowed) {
  using Scalar = typename Derived::Scalar;
  if (!embeddings.allFinite()) throw NumericError("non-finite embeddings in graph reconstruction");
  MatrixX<Scalar> gram = (embeddings * embeddings.transpose()).cwiseMax(Scalar(0));
  for (Index i = 0; i < gram.rows(); ++i)
    for (Index j = 0; j < gram.cols(); ++j) {
      // Blocked products can differ in the last bit across the diagonal.
      if (j < i) gram(i, j) = gram(j, i);
      if (!allowed(i, j)) gram(i, j) = Scalar(0);
    }
  return gram;
}

/// Learned adjacency: masked ReLU(H Hᵀ), unit diagonal on all-zero rows,
/// then row normalization.
template <typename Derived>
MatrixX<typename Derived::Scalar> reconstruct_adjacency(const Eigen::MatrixBase<Derived>& embeddings,
                                                        const Mask& allowed) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> raw = reconstruct_unnormalized(embeddings, allowed);
  for (Index i = 0; i < raw.rows(); ++i)
    if (!(raw.row(i).sum() > Scalar(0))) raw(i, i) = Scalar(1);
  return row_normalize(raw);
}

/// Binary graph with edge (i,j) iff d_ij < threshold, self-loops on every
/// node, row-normalized.
Matrix build_initial_adjacency(const Matrix& distances, double threshold_km);

/// Threshold giving a mean binary degree (self-loop excluded) of about
/// `target_degree`: the midpoint between the k-th and (k+1)-th smallest
/// pairwise distances, k = target_degree * N / 2.
double default_threshold_km(const Matrix& distances, double target_degree = 4.0);

/// d_ij < cutoff_km, diagonal always allowed. cutoff_km <= 0 allows all pairs.
Mask distance_cutoff_mask(const Matrix& distances, double cutoff_km);

/// Initial graph replicated over `steps` training steps. The reconstruction
/// cutoff is `cutoff_multiplier * threshold_km` (<= 0 disables it).
TemporalGraph build_initial_graph(const Matrix& distances, double threshold_km, Index steps = 1,
                                  double cutoff_multiplier = 3.0);

/// Max |row sum - 1| and min entry over a matrix.
struct StochasticCheck {
  double max_row_error = 0.0;
  double min_entry = 0.0;
  bool ok(double tol = 1e-9) const { return max_row_error <= tol && min_entry >= 0.0; }
};
StochasticCheck check_row_stochastic(const Matrix& m);

/// One dense CSV per step: adjacency_<t>.csv.
void dump_graph(const TemporalGraph& graph, const std::filesystem::path& dir);

}  // namespace dglr
