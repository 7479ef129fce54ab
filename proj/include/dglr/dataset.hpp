// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/common.hpp"

#include <filesystem>
#include <optional>

namespace dglr {

/// Locations, distances, per-step features and partially observed labels.
///
/// Time is 0-based throughout: steps [0, train_end) are trainable and
/// [train_end, num_time_steps) form the forecast interval.
struct SensorDataset {
  Index num_locations = 0;
  Index num_time_steps = 0;
  Index num_features = 0;

  /// N×2, lat/lon degrees or planar km depending on `planar`.
  Matrix coords;
  bool planar = true;
  /// N×N, km.
  Matrix distances;
  /// One N×D matrix per time step.
  MatrixSequence features;
  /// T_total×N; entries where label_mask is false are meaningless.
  Matrix labels;
  /// T_total×N; true where ground truth exists.
  Mask label_mask;
  Index train_end = 0;

  Index forecast_horizon() const { return num_time_steps - train_end; }
  Index labeled_count(Index begin, Index end) const;

  /// Throws InputError when any structural invariant is violated.
  void validate() const;
};

/// Per-feature standardization computed over the training steps only.
struct NormalizationStats {
  Vector mean;
  Vector stddev;
};

struct CsvOptions {
  /// Force Euclidean distances; otherwise the locations header decides.
  bool planar = false;
  /// Length of the forecast interval. Unset: round(0.2 * T_total), at least 1.
  std::optional<Index> test_steps;
};

inline constexpr double kEarthRadiusKm = 6371.0;

double haversine_km(double lat1, double lon1, double lat2, double lon2);
Matrix pairwise_distances(const Matrix& coords, bool planar);

SensorDataset load_csv(const std::filesystem::path& locations_path,
                       const std::filesystem::path& observations_path,
                       const CsvOptions& options = {});

/// Writes the two-file layout read by load_csv. Doubles use the shortest
/// round-trip representation, so load_csv(save_csv(d)) == d.
void save_csv(const SensorDataset& dataset,
              const std::filesystem::path& locations_path,
              const std::filesystem::path& observations_path);

NormalizationStats compute_normalization(const SensorDataset& dataset);
SensorDataset apply_normalization(const SensorDataset& dataset,
                                  const NormalizationStats& stats);
std::pair<SensorDataset, NormalizationStats> normalize_features(
    const SensorDataset& dataset);

/// Clears the mask on exactly round(p * count) of the labeled training cells.
SensorDataset mask_labels(const SensorDataset& dataset, double fraction,
                          std::uint64_t seed);

struct SyntheticSpec {
  Index num_locations = 12;
  Index num_time_steps = 60;
  Index num_features = 6;
  Index num_clusters = 3;
  double noise = 0.02;
  bool misspecified_graph = false;
  double side_km = 100.0;
  /// Defaults to round(0.2 * T_total), at least 1.
  std::optional<Index> test_steps;
};

/// Cluster-driven seasonal labels with AR(1) site noise and lagged noisy
/// features. Deterministic in (spec, seed).
SensorDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Cluster id per site from the last generate_synthetic-style construction.
/// Exposed for tests of the generator's clustering contract.
std::vector<Index> synthetic_clusters(const SyntheticSpec& spec,
                                      std::uint64_t seed);

/// Lloyd's algorithm on planar points, deterministic farthest-point seeding.
std::vector<Index> kmeans_assign(const Matrix& points, Index clusters);

/// The seasonal signal shared by every site of a cluster.
double seasonal_signal(Index cluster, Index num_clusters, double t);

Index default_test_steps(Index total_steps);

}  // namespace dglr
