// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <numbers>

using namespace dglr;
using dglr::testing::random_dataset;
using dglr::testing::temp_dir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string load_error(const std::string& locations, const std::string& observations) {
  const auto dir = temp_dir("load_error");
  write_file(dir / "locations.csv", locations);
  write_file(dir / "observations.csv", observations);
  try {
    load_csv(dir / "locations.csv", dir / "observations.csv");
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

const std::string kTwoPlanar = "location_id,x,y\n0,0,0\n1,0,1\n";

double pearson_of(const Vector& a, const Vector& b) {
  const Vector x = a.array() - a.mean();
  const Vector y = b.array() - b.mean();
  return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

}  // namespace

TEST_CASE("load_csv: distances from coordinates") {
  const auto dir = temp_dir("load_distances");
  write_file(dir / "locations.csv", "location_id,lat,lon\n0,41.5,-5.3\n1,41.5,-5.3\n");
  write_file(dir / "observations.csv",
             "time,location_id,f1,label\n0,0,1,0.2\n0,1,2,0.3\n1,0,1,\n1,1,2,0.1\n");
  const auto ds = load_csv(dir / "locations.csv", dir / "observations.csv");
  CHECK(ds.distances == Matrix::Zero(2, 2));
  CHECK_FALSE(ds.planar);
  CHECK_FALSE(ds.label_mask(1, 0));
  CHECK(ds.label_mask(1, 1));
  CHECK(ds.labels(0, 1) == 0.3);

  write_file(dir / "locations.csv", kTwoPlanar);
  const auto planar = load_csv(dir / "locations.csv", dir / "observations.csv");
  CHECK(planar.planar);
  CHECK(planar.distances(0, 1) == 1.0);
  CHECK(planar.distances(1, 0) == 1.0);
}

TEST_CASE("haversine: one degree of latitude") {
  // Arc length of one degree on a 6371 km sphere.
  const double expected = kEarthRadiusKm * std::numbers::pi / 180.0;
  CHECK(haversine_km(10.0, 20.0, 11.0, 20.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(haversine_km(-33.0, 151.0, -33.0, 151.0) == 0.0);
}

TEST_CASE("load_csv: 20-site file") {
  const auto src = random_dataset(20, 49, 6, 3, 9);
  const auto dir = temp_dir("twenty_sites");
  save_csv(src, dir / "locations.csv", dir / "observations.csv");
  CsvOptions options;
  options.test_steps = 9;
  const auto ds = load_csv(dir / "locations.csv", dir / "observations.csv", options);
  CHECK(ds.num_locations == 20);
  CHECK(ds.num_time_steps == 49);
  CHECK(ds.num_features == 6);
  CHECK(ds.train_end == 40);
}

TEST_CASE("load_csv: errors name the problem") {
  const std::string header = "time,location_id,f1,label\n";
  CHECK(load_error(kTwoPlanar, header + "0,0,1,0.2\n0,1,oops,0.3\n").find("observations.csv:3:") !=
        std::string::npos);
  CHECK(load_error(kTwoPlanar, header + "0,0,1,0.2\n0,1,1,0.3\n0,1,1,0.3\n").find("duplicate") !=
        std::string::npos);
  CHECK(load_error(kTwoPlanar, header + "0,0,1,0.2\n0,1,1,0.3\n2,0,1,0.2\n2,1,1,0.3\n")
            .find("not contiguous") != std::string::npos);
  CHECK(load_error(kTwoPlanar, header + "0,0,1,0.2\n0,1,1,0.3\n1,0,1,0.2\n")
            .find("missing observation") != std::string::npos);
  CHECK(load_error(kTwoPlanar, header + "0,0,1,0.2\n0,7,1,0.3\n").find("unknown location_id") !=
        std::string::npos);
  CHECK(load_error("id,a,b\n0,0,0\n", header).find("locations.csv:1:") != std::string::npos);
  CHECK_THROWS_AS(load_csv("/nonexistent/locations.csv", "/nonexistent/observations.csv"),
                  InputError);
}

TEST_CASE("save_csv then load_csv is the identity") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<Index> size(1, 6);
    auto src = random_dataset(size(rng), size(rng) + 2, size(rng), 100 + trial, 1);
    std::bernoulli_distribution hide(0.3);
    for (Index k = 0; k < src.label_mask.size(); ++k)
      if (hide(rng)) src.label_mask.data()[k] = false;
    for (Index k = 0; k < src.labels.size(); ++k)
      if (!src.label_mask.data()[k]) src.labels.data()[k] = 0.0;

    const auto dir = temp_dir("round_trip");
    save_csv(src, dir / "locations.csv", dir / "observations.csv");
    CsvOptions options;
    options.planar = true;
    options.test_steps = src.num_time_steps - src.train_end;
    const auto back = load_csv(dir / "locations.csv", dir / "observations.csv", options);
    REQUIRE(back.num_time_steps == src.num_time_steps);
    CHECK(back.coords == src.coords);
    CHECK(back.distances == src.distances);
    CHECK(back.labels == src.labels);
    CHECK(back.label_mask == src.label_mask);
    for (Index t = 0; t < src.num_time_steps; ++t) CHECK(back.features[t] == src.features[t]);
    CHECK(back.train_end == src.train_end);
  }
}

TEST_CASE("normalize_features") {
  auto ds = random_dataset(2, 3, 3, 1, 1);
  // Channel 0 constant 5, channel 1 takes {1, 3} over the training steps.
  for (Index t = 0; t < 3; ++t) {
    ds.features[t].col(0).setConstant(5.0);
    ds.features[t](0, 1) = t == 0 ? 1.0 : 3.0;
    ds.features[t](1, 1) = t == 0 ? 3.0 : 1.0;
  }
  const auto [norm, stats] = normalize_features(ds);
  CHECK(stats.stddev(0) == 1.0);
  CHECK(stats.mean(1) == 2.0);
  CHECK(stats.stddev(1) == 1.0);
  for (Index t = 0; t < 3; ++t) CHECK(norm.features[t].col(0).isZero(0.0));
  CHECK(norm.features[0](0, 1) == -1.0);
  CHECK(norm.features[1](0, 1) == 1.0);

  SUBCASE("standardized input is a fixed point") {
    const auto [twice, again] = normalize_features(norm);
    for (Index t = 0; t < 3; ++t) CHECK(twice.features[t].isApprox(norm.features[t], 1e-12));
  }
  SUBCASE("training channels have zero mean and unit std") {
    const auto big = random_dataset(7, 30, 4, 9, 6);
    const auto [z, s] = normalize_features(big);
    for (Index k = 0; k < 4; ++k) {
      double sum = 0, sq = 0, count = 0;
      for (Index t = 0; t < big.train_end; ++t)
        for (Index i = 0; i < 7; ++i) {
          sum += z.features[t](i, k);
          ++count;
        }
      const double mean = sum / count;
      for (Index t = 0; t < big.train_end; ++t)
        for (Index i = 0; i < 7; ++i) sq += std::pow(z.features[t](i, k) - mean, 2);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(std::sqrt(sq / count) - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("mask_labels") {
  const auto ds = random_dataset(10, 11, 2, 4, 1);  // 10 train steps x 10 nodes
  CHECK(mask_labels(ds, 0.0, 1).label_mask == ds.label_mask);

  const auto masked = mask_labels(ds, 0.3, 1);
  CHECK(masked.labeled_count(0, ds.train_end) == 70);
  CHECK(masked.label_mask.row(10) == ds.label_mask.row(10));
  CHECK(mask_labels(ds, 0.3, 1).label_mask == masked.label_mask);
  CHECK(mask_labels(ds, 0.3, 2).label_mask != masked.label_mask);

  const auto twice = mask_labels(masked, 0.5, 3);
  for (Index k = 0; k < twice.label_mask.size(); ++k)
    if (!masked.label_mask.data()[k]) CHECK_FALSE(twice.label_mask.data()[k]);
  CHECK_THROWS_AS(mask_labels(ds, 1.0, 1), InputError);
}

TEST_CASE("generate_synthetic") {
  SUBCASE("one noiseless site follows the seasonal signal exactly") {
    SyntheticSpec spec;
    spec.num_locations = 1;
    spec.num_clusters = 1;
    spec.noise = 0.0;
    const auto ds = generate_synthetic(spec, 3);
    for (Index t = 0; t < spec.num_time_steps; ++t)
      CHECK(ds.labels(t, 0) == seasonal_signal(0, 1, static_cast<double>(t)));
  }
  SUBCASE("deterministic in the seed") {
    SyntheticSpec spec;
    const auto a = generate_synthetic(spec, 11);
    const auto b = generate_synthetic(spec, 11);
    CHECK(a.labels == b.labels);
    CHECK(a.coords == b.coords);
    for (Index t = 0; t < a.num_time_steps; ++t) CHECK(a.features[t] == b.features[t]);
    CHECK(generate_synthetic(spec, 12).labels != a.labels);
  }
  SUBCASE("labels correlate more within clusters than across") {
    for (bool misspecified : {false, true}) {
      SyntheticSpec spec;
      spec.misspecified_graph = misspecified;
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto ds = generate_synthetic(spec, seed);
        const auto cluster = synthetic_clusters(spec, seed);
        double within = 0, across = 0;
        int nw = 0, na = 0;
        for (Index i = 0; i < 12; ++i)
          for (Index j = i + 1; j < 12; ++j) {
            const double r = pearson_of(ds.labels.col(i), ds.labels.col(j));
            if (cluster[i] == cluster[j]) {
              within += r;
              ++nw;
            } else {
              across += r;
              ++na;
            }
          }
        CHECK(within / nw > across / na);
      }
    }
  }
  SUBCASE("well-specified clusters are the spatial k-means blocks") {
    SyntheticSpec spec;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto ds = generate_synthetic(spec, seed);
      const auto cluster = synthetic_clusters(spec, seed);
      // Lloyd fixed point: every site sits closest to its own block's centroid.
      Matrix centroid = Matrix::Zero(3, 2);
      Vector count = Vector::Zero(3);
      for (Index i = 0; i < 12; ++i) {
        centroid.row(cluster[i]) += ds.coords.row(i);
        count(cluster[i]) += 1;
      }
      REQUIRE(count.minCoeff() > 0);
      for (Index c = 0; c < 3; ++c) centroid.row(c) /= count(c);
      for (Index i = 0; i < 12; ++i) {
        Index nearest = 0;
        (centroid.rowwise() - ds.coords.row(i)).rowwise().squaredNorm().minCoeff(&nearest);
        CHECK(nearest == cluster[i]);
      }
    }
  }
  SUBCASE("more clusters than sites") {
    SyntheticSpec spec;
    spec.num_clusters = 13;
    CHECK_THROWS_AS(generate_synthetic(spec, 1), InputError);
  }
}
