// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/training.hpp"

#include <filesystem>
#include <random>

namespace dglr::testing {

/// Random planar dataset with every label observed.
inline SensorDataset random_dataset(Index n, Index steps, Index d, std::uint64_t seed,
                                    Index test_steps = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SensorDataset ds;
  ds.num_locations = n;
  ds.num_time_steps = steps;
  ds.num_features = d;
  ds.planar = true;
  ds.coords = Matrix(n, 2);
  for (Index i = 0; i < n; ++i) ds.coords.row(i) << 10.0 * unit(rng), 10.0 * unit(rng);
  ds.distances = pairwise_distances(ds.coords, true);
  ds.features.assign(steps, Matrix(n, d));
  for (auto& x : ds.features)
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = gauss(rng);
  ds.labels = Matrix(steps, n);
  for (Index k = 0; k < ds.labels.size(); ++k) ds.labels.data()[k] = 0.1 + 0.4 * unit(rng);
  ds.label_mask = Mask::Constant(steps, n, true);
  ds.train_end = steps - test_steps;
  ds.validate();
  return ds;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = gauss(rng);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dglr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Central differences of the weighted total over every flat parameter.
inline Vector finite_difference_gradient(const ModelParams& params, const TemporalGraph& graph,
                                         const TrainingData& data, const LossWeights& weights,
                                         double step = 1e-5) {
  const Vector base = flatten(params);
  Vector grad(base.size());
  ModelParams probe = params;
  for (Index k = 0; k < base.size(); ++k) {
    Vector x = base;
    x(k) = base(k) + step;
    assign_flat(probe, x);
    const double up = evaluate_losses(probe, graph, data, weights).total;
    x(k) = base(k) - step;
    assign_flat(probe, x);
    const double down = evaluate_losses(probe, graph, data, weights).total;
    grad(k) = (up - down) / (2.0 * step);
  }
  return grad;
}

/// Distance of the instance from the non-differentiable points central
/// differences cannot see past: LeakyReLU logits, ReLU on the Gram matrix and
/// the head ReLU.
inline double kink_margin(const ModelParams& params, const TemporalGraph& graph,
                          const TrainingData& data) {
  const ForwardPass fp = forward_all(params, graph, data.features, data.train_end);
  double margin = std::numeric_limits<double>::infinity();
  for (Index t = 0; t < fp.num_steps(); ++t) {
    const Matrix& adjacency = graph.adjacency_at(t);
    for (const auto& g : fp.steps[t].gnn)
      for (Index i = 0; i < g.scores.rows(); ++i)
        for (Index j = 0; j < g.scores.cols(); ++j)
          if (adjacency(i, j) > 0.0) margin = std::min(margin, std::abs(g.scores(i, j)));
    const Matrix gram = fp.embeddings(t) * fp.embeddings(t).transpose();
    margin = std::min(margin, gram.cwiseAbs().minCoeff());
  }
  for (Index t = params.dims.window; t < fp.num_steps(); ++t)
    margin = std::min(margin, fp.head_pre.row(t).cwiseAbs().minCoeff());
  return margin;
}

struct GradientComparison {
  double max_relative_error = 0.0;
  Index worst = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). Central differences at h = 1e-5 carry
/// round-off near 1e-11 on a unit-scale loss, so entries below `floor` are
/// effectively held to an absolute tolerance.
inline GradientComparison compare_gradients(const Vector& analytic, const Vector& numeric,
                                            double floor = 1e-6) {
  GradientComparison c;
  for (Index k = 0; k < analytic.size(); ++k) {
    const double scale = std::max({std::abs(analytic(k)), std::abs(numeric(k)), floor});
    const double rel = std::abs(analytic(k) - numeric(k)) / scale;
    if (rel > c.max_relative_error) {
      c.max_relative_error = rel;
      c.worst = k;
      c.analytic = analytic(k);
      c.numeric = numeric(k);
    }
  }
  return c;
}

}  // namespace dglr::testing
