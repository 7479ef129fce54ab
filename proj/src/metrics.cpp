// SPDX-License-Identifier: Apache-2.0
#include "dglr/metrics.hpp"

#include "dglr/text.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace dglr {

double rmse(const Vector& actual, const Vector& predicted) {
  if (actual.size() == 0) return 0.0;
  return std::sqrt((actual - predicted).squaredNorm() / static_cast<double>(actual.size()));
}

double smape_percent(const Vector& actual, const Vector& predicted) {
  if (actual.size() == 0) return 0.0;
  double sum = 0.0;
  for (Index k = 0; k < actual.size(); ++k) {
    const double denom = std::abs(actual(k)) + std::abs(predicted(k));
    if (denom > 0.0) sum += std::abs(actual(k) - predicted(k)) / denom;
  }
  return 100.0 * sum / static_cast<double>(actual.size());
}

std::optional<double> pearson(const Vector& actual, const Vector& predicted) {
  if (actual.size() < 2) return std::nullopt;
  const Vector a = actual.array() - actual.mean();
  const Vector p = predicted.array() - predicted.mean();
  const double va = a.squaredNorm();
  const double vp = p.squaredNorm();
  if (!(va > 0.0) || !(vp > 0.0)) return std::nullopt;
  return std::clamp(a.dot(p) / std::sqrt(va * vp), -1.0, 1.0);
}

EvalReport evaluate(const Matrix& predictions, const Matrix& labels, const Mask& mask, Index begin,
                    Index end) {
  if (begin < 0 || end > predictions.rows() || begin > end)
    throw InputError("evaluation interval outside the prediction range");
  EvalReport report;
  double rmse_sum = 0.0, smape_sum = 0.0, pearson_sum = 0.0;
  Index located = 0, correlated = 0;
  for (Index i = 0; i < labels.cols(); ++i) {
    std::vector<double> s, p;
    for (Index t = begin; t < end; ++t)
      if (mask(t, i)) {
        if (std::isnan(predictions(t, i)))
          throw InputError("no prediction for labeled cell at time " + std::to_string(t) +
                           ", location " + std::to_string(i));
        s.push_back(labels(t, i));
        p.push_back(predictions(t, i));
      }
    if (s.empty()) continue;
    const Eigen::Map<const Vector> actual(s.data(), static_cast<Index>(s.size()));
    const Eigen::Map<const Vector> predicted(p.data(), static_cast<Index>(p.size()));
    LocationMetrics m;
    m.location = i;
    m.count = actual.size();
    m.rmse = rmse(actual, predicted);
    m.smape_percent = smape_percent(actual, predicted);
    m.pearson = pearson(actual, predicted);
    rmse_sum += m.rmse;
    smape_sum += m.smape_percent;
    ++located;
    if (m.pearson) {
      pearson_sum += *m.pearson;
      ++correlated;
    }
    report.evaluated_points += m.count;
    report.locations.push_back(m);
  }
  if (located == 0) throw InputError("no ground truth in the evaluation interval");
  report.mean_rmse = rmse_sum / static_cast<double>(located);
  report.mean_smape_percent = smape_sum / static_cast<double>(located);
  if (correlated > 0) report.mean_pearson = pearson_sum / static_cast<double>(correlated);
  return report;
}

namespace {

std::string or_na(const std::optional<double>& v) {
  return v ? text::format_double(*v) : std::string("NA");
}

}  // namespace

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "location_id,count,rmse,smape_percent,correlation\n";
  for (const auto& m : report.locations)
    out << m.location << ',' << m.count << ',' << text::format_double(m.rmse) << ','
        << text::format_double(m.smape_percent) << ',' << or_na(m.pearson) << '\n';
  out << "AVERAGE," << report.evaluated_points << ',' << text::format_double(report.mean_rmse) << ','
      << text::format_double(report.mean_smape_percent) << ',' << or_na(report.mean_pearson) << '\n';
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  using nlohmann::json;
  auto corr = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["evaluated_points"] = report.evaluated_points;
  j["average"] = {{"rmse", report.mean_rmse},
                  {"smape_percent", report.mean_smape_percent},
                  {"correlation", corr(report.mean_pearson)}};
  j["locations"] = json::array();
  for (const auto& m : report.locations)
    j["locations"].push_back({{"location_id", m.location},
                              {"count", m.count},
                              {"rmse", m.rmse},
                              {"smape_percent", m.smape_percent},
                              {"correlation", corr(m.pearson)}});
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace dglr
