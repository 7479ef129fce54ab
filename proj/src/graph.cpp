// SPDX-License-Identifier: Apache-2.0
#include "dglr/graph.hpp"

#include "dglr/text.hpp"

#include <algorithm>
#include <fstream>

namespace dglr {

Matrix build_initial_adjacency(const Matrix& distances, double threshold_km) {
  if (!(threshold_km > 0.0)) throw InputError("threshold_km must be > 0");
  const Index n = distances.rows();
  Matrix binary = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i == j || distances(i, j) < threshold_km) binary(i, j) = 1.0;
  return row_normalize(binary);
}

double default_threshold_km(const Matrix& distances, double target_degree) {
  const Index n = distances.rows();
  std::vector<double> pairs;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) pairs.push_back(distances(i, j));
  if (pairs.empty()) return 1.0;
  std::sort(pairs.begin(), pairs.end());
  const auto k = static_cast<std::size_t>(std::llround(target_degree * static_cast<double>(n) / 2.0));
  if (k >= pairs.size()) return pairs.back() + 1.0;
  if (k == 0) return std::max(pairs.front() / 2.0, 1e-9);
  const double t = 0.5 * (pairs[k - 1] + pairs[k]);
  return t > 0.0 ? t : 1e-9;
}

Mask distance_cutoff_mask(const Matrix& distances, double cutoff_km) {
  const Index n = distances.rows();
  Mask allowed = Mask::Constant(n, n, true);
  if (cutoff_km <= 0.0) return allowed;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) allowed(i, j) = i == j || distances(i, j) < cutoff_km;
  return allowed;
}

TemporalGraph build_initial_graph(const Matrix& distances, double threshold_km, Index steps,
                                  double cutoff_multiplier) {
  if (steps < 1) throw InputError("graph needs at least one step");
  TemporalGraph g;
  g.threshold_km = threshold_km;
  g.initial_adjacency = build_initial_adjacency(distances, threshold_km);
  g.current_adjacency.assign(steps, g.initial_adjacency);
  g.cutoff_mask = distance_cutoff_mask(distances, cutoff_multiplier * threshold_km);
  return g;
}

StochasticCheck check_row_stochastic(const Matrix& m) {
  StochasticCheck c;
  c.min_entry = m.minCoeff();
  c.max_row_error = (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
  return c;
}

void dump_graph(const TemporalGraph& graph, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (Index t = 0; t < graph.num_steps(); ++t) {
    std::ofstream out(dir / ("adjacency_" + std::to_string(t) + ".csv"));
    if (!out) throw InputError("cannot write graph dump to " + dir.string());
    const Matrix& a = graph.current_adjacency[t];
    for (Index i = 0; i < a.rows(); ++i) {
      for (Index j = 0; j < a.cols(); ++j) {
        if (j) out << ',';
        out << text::format_double(a(i, j));
      }
      out << '\n';
    }
  }
}

}  // namespace dglr
