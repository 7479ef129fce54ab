// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/common.hpp"

#include <filesystem>
#include <optional>

namespace dglr {

struct LocationMetrics {
  Index location = 0;
  Index count = 0;
  double rmse = 0.0;
  double smape_percent = 0.0;
  /// Unset when either series has zero variance or fewer than 2 points ("NA").
  std::optional<double> pearson;
};

struct EvalReport {
  std::vector<LocationMetrics> locations;
  /// Unweighted means over locations with at least one evaluated point;
  /// undefined correlations are excluded from the mean.
  double mean_rmse = 0.0;
  double mean_smape_percent = 0.0;
  std::optional<double> mean_pearson;
  Index evaluated_points = 0;
};

double rmse(const Vector& actual, const Vector& predicted);
/// 100 · mean |s - ŝ| / (|s| + |ŝ|), 0/0 terms count as 0. Range [0, 100].
double smape_percent(const Vector& actual, const Vector& predicted);
std::optional<double> pearson(const Vector& actual, const Vector& predicted);

/// Metrics over steps [begin, end) of steps×N `predictions`, using only cells
/// where `mask` is true. Throws InputError when no cell qualifies.
EvalReport evaluate(const Matrix& predictions, const Matrix& labels, const Mask& mask, Index begin,
                    Index end);

/// Per-location rows plus a final AVERAGE row; NA for undefined correlation.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);

}  // namespace dglr
