// SPDX-License-Identifier: Apache-2.0
#include "dglr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace dglr {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNoiseMemory = 0.7;     // AR(1) coefficient of site noise
constexpr double kFeatureNoise = 1.0;
// Regional shock shared by a cluster, in units of the site noise level.
constexpr double kShockRatio = 2.5;
constexpr double kShockMemory = 0.9;

/// Stationary AR(1) path of length `steps` with marginal std `scale`.
std::vector<double> ar1_path(Index steps, double memory, double scale, std::mt19937_64& rng,
                             std::normal_distribution<double>& gauss) {
  std::vector<double> out(static_cast<std::size_t>(steps));
  const double innovation = scale * std::sqrt(1.0 - memory * memory);
  double v = scale * gauss(rng);
  for (Index t = 0; t < steps; ++t) {
    if (t > 0) v = memory * v + innovation * gauss(rng);
    out[static_cast<std::size_t>(t)] = v;
  }
  return out;
}

double cluster_base(Index c) { return 0.25 + 0.025 * static_cast<double>(c % 3); }
double cluster_scale(Index c) { return 0.08 * (1.0 + 0.25 * static_cast<double>(c % 2)); }

void check_spec(const SyntheticSpec& spec) {
  if (spec.num_locations < 1) throw InputError("synthetic data: n must be >= 1");
  if (spec.num_time_steps < 2) throw InputError("synthetic data: t must be >= 2");
  if (spec.num_features < 1) throw InputError("synthetic data: d must be >= 1");
  if (spec.num_clusters < 1) throw InputError("synthetic data: clusters must be >= 1");
  if (spec.num_clusters > spec.num_locations)
    throw InputError("synthetic data: clusters (" + std::to_string(spec.num_clusters) +
                     ") exceeds locations (" + std::to_string(spec.num_locations) + ")");
  if (!(spec.noise >= 0.0)) throw InputError("synthetic data: noise must be >= 0");
  if (!(spec.side_km > 0.0)) throw InputError("synthetic data: side must be > 0");
}

Matrix place_sites(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(0.0, spec.side_km);
  Matrix coords(spec.num_locations, 2);
  for (Index i = 0; i < spec.num_locations; ++i) {
    coords(i, 0) = coord(rng);
    coords(i, 1) = coord(rng);
  }
  return coords;
}

std::vector<Index> assign_clusters(const SyntheticSpec& spec, const Matrix& coords,
                                   std::mt19937_64& rng) {
  if (!spec.misspecified_graph) return kmeans_assign(coords, spec.num_clusters);
  // Balanced assignment that ignores position entirely.
  std::vector<Index> order(spec.num_locations);
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> cluster(spec.num_locations);
  for (Index k = 0; k < spec.num_locations; ++k) cluster[order[k]] = k % spec.num_clusters;
  return cluster;
}

}  // namespace

double seasonal_signal(Index cluster, Index num_clusters, double t) {
  const double phase = kTwoPi * static_cast<double>(cluster) / static_cast<double>(num_clusters);
  return cluster_base(cluster) +
         cluster_scale(cluster) *
             (std::sin(kTwoPi * t / 24.0 + phase) + 0.4 * std::sin(kTwoPi * t / 6.0 + 2.0 * phase));
}

std::vector<Index> kmeans_assign(const Matrix& points, Index clusters) {
  const Index n = points.rows();
  if (clusters < 1 || clusters > n) throw InputError("kmeans: bad cluster count");

  Matrix centers(clusters, points.cols());
  centers.row(0) = points.row(0);
  Vector nearest = (points.rowwise() - points.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < clusters; ++c) {
    Index far = 0;
    nearest.maxCoeff(&far);
    centers.row(c) = points.row(far);
    nearest = nearest.cwiseMin((points.rowwise() - points.row(far)).rowwise().squaredNorm());
  }

  std::vector<Index> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (Index c = 0; c < clusters; ++c) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
      Index count = 0;
      for (Index i = 0; i < n; ++i)
        if (assign[i] == c) {
          sum += points.row(i);
          ++count;
        }
      if (count > 0) centers.row(c) = sum / static_cast<double>(count);
    }
  }
  return assign;
}

std::vector<Index> synthetic_clusters(const SyntheticSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  std::mt19937_64 rng(seed);
  const Matrix coords = place_sites(spec, rng);
  return assign_clusters(spec, coords, rng);
}

SensorDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const Index n = spec.num_locations;
  const Index t_total = spec.num_time_steps;
  const Index d = spec.num_features;
  const Index c_count = spec.num_clusters;

  SensorDataset ds;
  ds.num_locations = n;
  ds.num_time_steps = t_total;
  ds.num_features = d;
  ds.planar = true;
  ds.coords = place_sites(spec, rng);
  const auto cluster = assign_clusters(spec, ds.coords, rng);
  ds.distances = pairwise_distances(ds.coords, true);

  // The shock is what makes a wrong-cluster neighbor misleading: a phase
  // shifted sinusoid can be recovered from any site, a regional shock cannot.
  Matrix shock(t_total, c_count);
  for (Index c = 0; c < c_count; ++c) {
    const auto path = ar1_path(t_total, kShockMemory, kShockRatio * spec.noise, rng, gauss);
    for (Index t = 0; t < t_total; ++t) shock(t, c) = path[static_cast<std::size_t>(t)];
  }
  ds.labels = Matrix::Zero(t_total, n);
  ds.label_mask = Mask::Constant(t_total, n, true);
  for (Index i = 0; i < n; ++i) {
    const auto eps = ar1_path(t_total, kNoiseMemory, spec.noise, rng, gauss);
    for (Index t = 0; t < t_total; ++t)
      ds.labels(t, i) = seasonal_signal(cluster[i], c_count, static_cast<double>(t)) +
                        shock(t, cluster[i]) + eps[static_cast<std::size_t>(t)];
  }

  // Feature k sees the cluster signal plus shock lagged by (k mod 3) steps;
  // odd channels are squashed. Independent per-site noise keeps single-site
  // features insufficient on their own.
  ds.features.assign(t_total, Matrix::Zero(n, d));
  for (Index t = 0; t < t_total; ++t) {
    for (Index i = 0; i < n; ++i) {
      const Index c = cluster[i];
      for (Index k = 0; k < d; ++k) {
        const Index lag = k % 3;
        const double lagged = seasonal_signal(c, c_count, static_cast<double>(t - lag)) +
                              shock(std::max<Index>(0, t - lag), c);
        const double z = (lagged - cluster_base(c)) / cluster_scale(c);
        const double shaped = (k % 2 == 0) ? z : std::tanh(z);
        ds.features[t](i, k) = shaped + kFeatureNoise * gauss(rng);
      }
    }
  }

  ds.train_end = t_total - spec.test_steps.value_or(default_test_steps(t_total));
  ds.validate();
  return ds;
}

}  // namespace dglr
