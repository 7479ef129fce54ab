// SPDX-License-Identifier: Apache-2.0
#include "dglr/dataset.hpp"

#include "dglr/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace dglr {

namespace {

std::string at_line(const std::filesystem::path& path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line) + ": ";
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

}  // namespace

Index default_test_steps(Index total_steps) {
  return std::max<Index>(1, std::llround(0.2 * static_cast<double>(total_steps)));
}

Index SensorDataset::labeled_count(Index begin, Index end) const {
  Index count = 0;
  for (Index t = begin; t < end; ++t) count += label_mask.row(t).count();
  return count;
}

void SensorDataset::validate() const {
  const Index n = num_locations;
  if (n < 1) throw InputError("dataset has no locations");
  if (distances.rows() != n || distances.cols() != n)
    throw InputError("distance matrix is not N x N");
  for (Index i = 0; i < n; ++i) {
    if (distances(i, i) != 0.0) throw InputError("distance diagonal must be zero");
    for (Index j = 0; j < n; ++j) {
      if (!(distances(i, j) >= 0.0)) throw InputError("negative or NaN distance");
      if (distances(i, j) != distances(j, i)) throw InputError("distances not symmetric");
    }
  }
  if (static_cast<Index>(features.size()) != num_time_steps)
    throw InputError("feature sequence length differs from num_time_steps");
  for (const auto& x : features) {
    if (x.rows() != n || x.cols() != num_features)
      throw InputError("feature matrix is not N x D");
    if (!x.allFinite()) throw InputError("non-finite feature value");
  }
  if (labels.rows() != num_time_steps || labels.cols() != n ||
      label_mask.rows() != num_time_steps || label_mask.cols() != n)
    throw InputError("labels/mask are not T x N");
  if (train_end < 1 || train_end >= num_time_steps)
    throw InputError("train_end must satisfy 1 <= train_end < T_total");
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * deg;
  const double dlon = (lon2 - lon1) * deg;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * deg) * std::cos(lat2 * deg) *
                       std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

Matrix pairwise_distances(const Matrix& coords, bool planar) {
  const Index n = coords.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double v = planar ? (coords.row(i) - coords.row(j)).norm()
                              : haversine_km(coords(i, 0), coords(i, 1),
                                             coords(j, 0), coords(j, 1));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

SensorDataset load_csv(const std::filesystem::path& locations_path,
                       const std::filesystem::path& observations_path,
                       const CsvOptions& options) {
  SensorDataset ds;

  // locations.csv
  {
    auto in = open_input(locations_path);
    std::string line;
    if (!std::getline(in, line)) throw InputError(locations_path.string() + " is empty");
    const auto header = text::split(text::trim(line));
    if (header.size() != 3 || text::trim(header[0]) != "location_id")
      throw InputError(at_line(locations_path, 1) + "expected header location_id,lat,lon or location_id,x,y");
    const auto c1 = text::trim(header[1]);
    const auto c2 = text::trim(header[2]);
    if (c1 == "x" && c2 == "y") {
      ds.planar = true;
    } else if (c1 == "lat" && c2 == "lon") {
      ds.planar = options.planar;
    } else {
      throw InputError(at_line(locations_path, 1) + "expected header location_id,lat,lon or location_id,x,y");
    }

    std::vector<std::pair<long long, std::array<double, 2>>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      const auto fields = text::split(text::trim(line));
      long long id = 0;
      std::array<double, 2> xy{};
      if (fields.size() != 3 || !text::parse_int(fields[0], id) ||
          !text::parse_double(fields[1], xy[0]) || !text::parse_double(fields[2], xy[1]))
        throw InputError(at_line(locations_path, lineno) + "malformed row");
      rows.emplace_back(id, xy);
    }
    const Index n = static_cast<Index>(rows.size());
    if (n == 0) throw InputError(locations_path.string() + " has no locations");
    ds.num_locations = n;
    ds.coords.resize(n, 2);
    std::vector<bool> seen(n, false);
    for (const auto& [id, xy] : rows) {
      if (id < 0 || id >= n) throw InputError("location ids must be contiguous from 0");
      if (seen[id]) throw InputError("duplicate location_id " + std::to_string(id));
      seen[id] = true;
      ds.coords(id, 0) = xy[0];
      ds.coords(id, 1) = xy[1];
    }
    ds.distances = pairwise_distances(ds.coords, ds.planar);
  }

  // observations.csv
  {
    auto in = open_input(observations_path);
    std::string line;
    if (!std::getline(in, line)) throw InputError(observations_path.string() + " is empty");
    const auto header = text::split(text::trim(line));
    if (header.size() < 4 || text::trim(header[0]) != "time" ||
        text::trim(header[1]) != "location_id" || text::trim(header.back()) != "label")
      throw InputError(at_line(observations_path, 1) +
                       "expected header time,location_id,f1,...,fD,label");
    const Index d = static_cast<Index>(header.size()) - 3;
    ds.num_features = d;

    struct Row {
      long long time;
      long long loc;
      std::vector<double> x;
      std::optional<double> label;
      std::size_t line;
    };
    std::vector<Row> rows;
    long long max_time = -1;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      const auto fields = text::split(line);
      if (static_cast<Index>(fields.size()) != d + 3)
        throw InputError(at_line(observations_path, lineno) + "expected " +
                         std::to_string(d + 3) + " fields, got " + std::to_string(fields.size()));
      Row row{0, 0, std::vector<double>(d), std::nullopt, lineno};
      if (!text::parse_int(fields[0], row.time) || row.time < 0)
        throw InputError(at_line(observations_path, lineno) + "bad time index");
      if (!text::parse_int(fields[1], row.loc) || row.loc < 0 || row.loc >= ds.num_locations)
        throw InputError(at_line(observations_path, lineno) + "unknown location_id");
      for (Index k = 0; k < d; ++k)
        if (!text::parse_double(fields[2 + k], row.x[k]))
          throw InputError(at_line(observations_path, lineno) + "bad feature value in column " +
                           std::string(text::trim(header[2 + k])));
      if (!text::trim(fields.back()).empty()) {
        double v = 0;
        if (!text::parse_double(fields.back(), v))
          throw InputError(at_line(observations_path, lineno) + "bad label value");
        row.label = v;
      }
      max_time = std::max(max_time, row.time);
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError(observations_path.string() + " has no rows");

    std::set<long long> times;
    for (const auto& r : rows) times.insert(r.time);
    if (static_cast<long long>(times.size()) != max_time + 1)
      throw InputError(observations_path.filename().string() +
                       ": time indices are not contiguous from 0");

    const Index t_total = max_time + 1;
    const Index n = ds.num_locations;
    ds.num_time_steps = t_total;
    ds.features.assign(t_total, Matrix::Zero(n, d));
    ds.labels = Matrix::Zero(t_total, n);
    ds.label_mask = Mask::Constant(t_total, n, false);
    Mask present = Mask::Constant(t_total, n, false);
    for (const auto& r : rows) {
      if (present(r.time, r.loc))
        throw InputError(at_line(observations_path, r.line) + "duplicate (time, location_id) = (" +
                         std::to_string(r.time) + ", " + std::to_string(r.loc) + ")");
      present(r.time, r.loc) = true;
      ds.features[r.time].row(r.loc) = Eigen::Map<const Vector>(r.x.data(), d).transpose();
      if (r.label) {
        ds.labels(r.time, r.loc) = *r.label;
        ds.label_mask(r.time, r.loc) = true;
      }
    }
    for (Index t = 0; t < t_total; ++t)
      for (Index i = 0; i < n; ++i)
        if (!present(t, i))
          throw InputError("missing observation for time " + std::to_string(t) +
                           ", location " + std::to_string(i));
  }

  const Index test_steps = options.test_steps.value_or(default_test_steps(ds.num_time_steps));
  ds.train_end = ds.num_time_steps - test_steps;
  ds.validate();
  return ds;
}

void save_csv(const SensorDataset& ds, const std::filesystem::path& locations_path,
              const std::filesystem::path& observations_path) {
  using text::format_double;
  {
    std::ofstream out(locations_path);
    if (!out) throw InputError("cannot write " + locations_path.string());
    out << (ds.planar ? "location_id,x,y\n" : "location_id,lat,lon\n");
    for (Index i = 0; i < ds.num_locations; ++i)
      out << i << ',' << format_double(ds.coords(i, 0)) << ',' << format_double(ds.coords(i, 1))
          << '\n';
  }
  std::ofstream out(observations_path);
  if (!out) throw InputError("cannot write " + observations_path.string());
  out << "time,location_id";
  for (Index k = 0; k < ds.num_features; ++k) out << ",f" << (k + 1);
  out << ",label\n";
  for (Index t = 0; t < ds.num_time_steps; ++t) {
    for (Index i = 0; i < ds.num_locations; ++i) {
      out << t << ',' << i;
      for (Index k = 0; k < ds.num_features; ++k) out << ',' << format_double(ds.features[t](i, k));
      out << ',';
      if (ds.label_mask(t, i)) out << format_double(ds.labels(t, i));
      out << '\n';
    }
  }
}

NormalizationStats compute_normalization(const SensorDataset& ds) {
  const Index d = ds.num_features;
  const double count = static_cast<double>(ds.train_end * ds.num_locations);
  NormalizationStats stats{Vector::Zero(d), Vector::Ones(d)};
  for (Index t = 0; t < ds.train_end; ++t) stats.mean += ds.features[t].colwise().sum().transpose();
  stats.mean /= count;
  Vector var = Vector::Zero(d);
  for (Index t = 0; t < ds.train_end; ++t)
    var += (ds.features[t].rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  var /= count;
  for (Index k = 0; k < d; ++k) {
    const double sd = std::sqrt(var(k));
    // Degenerate channels are only shifted.
    stats.stddev(k) = sd > 1e-12 ? sd : 1.0;
  }
  return stats;
}

SensorDataset apply_normalization(const SensorDataset& dataset, const NormalizationStats& stats) {
  if (stats.mean.size() != dataset.num_features)
    throw InputError("normalization stats have " + std::to_string(stats.mean.size()) +
                     " features, dataset has " + std::to_string(dataset.num_features));
  SensorDataset out = dataset;
  for (auto& x : out.features)
    x = ((x.rowwise() - stats.mean.transpose()).array().rowwise() / stats.stddev.transpose().array())
            .matrix();
  return out;
}

std::pair<SensorDataset, NormalizationStats> normalize_features(const SensorDataset& dataset) {
  auto stats = compute_normalization(dataset);
  return {apply_normalization(dataset, stats), std::move(stats)};
}

SensorDataset mask_labels(const SensorDataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw InputError("mask fraction must be in [0, 1)");
  SensorDataset out = dataset;
  std::vector<std::pair<Index, Index>> cells;
  for (Index t = 0; t < dataset.train_end; ++t)
    for (Index i = 0; i < dataset.num_locations; ++i)
      if (dataset.label_mask(t, i)) cells.emplace_back(t, i);
  const auto drop = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cells.size())));
  std::mt19937_64 rng(seed);
  std::shuffle(cells.begin(), cells.end(), rng);
  for (std::size_t k = 0; k < drop; ++k) out.label_mask(cells[k].first, cells[k].second) = false;
  return out;
}

}  // namespace dglr
