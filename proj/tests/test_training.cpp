// SPDX-License-Identifier: Apache-2.0
#include "dglr/io.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <fstream>

using namespace dglr;
using dglr::testing::random_dataset;
using dglr::testing::temp_dir;

namespace {

SensorDataset small_synthetic(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.num_locations = 6;
  spec.num_time_steps = 16;
  spec.num_features = 3;
  spec.num_clusters = 2;
  return generate_synthetic(spec, seed);
}

TrainConfig quick_config(Ablation ablation = Ablation::full) {
  TrainConfig c;
  c.embedding_dim = 4;
  c.epochs = 15;
  c.outer_iters = 2;
  c.seed = 3;
  c.ablation = ablation;
  return c;
}

}  // namespace

TEST_CASE("ADAM") {
  OptimizerState adam(3);
  Vector x = Eigen::Vector3d(1.0, -2.0, 0.5);
  const Vector start = x;
  adam.apply(x, Vector::Zero(3), 0.1);
  CHECK(x == start);

  OptimizerState fresh(2);
  Vector y = Eigen::Vector2d(0.0, 0.0);
  const Vector g = Eigen::Vector2d(4.0, -0.001);
  fresh.apply(y, g, 0.01);
  // First bias-corrected step is lr * g / (|g| + eps).
  CHECK(std::abs(y(0) + 0.01 * 4.0 / (4.0 + 1e-8)) < 1e-15);
  CHECK(std::abs(y(1) - 0.01 * 0.001 / (0.001 + 1e-8)) < 1e-15);
}

TEST_CASE("training is deterministic in the seed") {
  const auto ds = small_synthetic();
  const TrainResult a = train(ds, quick_config());
  const TrainResult b = train(ds, quick_config());
  REQUIRE(a.log.size() == 30);
  for (std::size_t k = 0; k < a.log.size(); ++k) CHECK(a.log[k].losses.raw() == b.log[k].losses.raw());
  CHECK(flatten(a.model.params) == flatten(b.model.params));
  for (Index t = 0; t < a.model.graph.num_steps(); ++t)
    CHECK(a.model.graph.current_adjacency[t] == b.model.graph.current_adjacency[t]);

  TrainConfig other = quick_config();
  other.seed = 4;
  CHECK(flatten(train(ds, other).model.params) != flatten(a.model.params));
}

TEST_CASE("graphs across outer iterations") {
  const auto ds = small_synthetic();
  SUBCASE("no_sl never touches the graph") {
    TrainConfig c = quick_config(Ablation::no_sl);
    c.outer_iters = 3;
    const TrainResult r = train(ds, c);
    for (const auto& a : r.model.graph.current_adjacency) CHECK(a == r.model.graph.initial_adjacency);
    CHECK(r.weights.gc == 0.0);
    CHECK(r.weights.ts == 0.0);
  }
  SUBCASE("learned graphs stay row-stochastic") {
    for (int outer : {1, 2, 3}) {
      TrainConfig c = quick_config();
      c.outer_iters = outer;
      const TrainResult r = train(ds, c);
      bool changed = false;
      for (const auto& a : r.model.graph.current_adjacency) {
        CHECK(check_row_stochastic(a).ok());
        for (Index i = 0; i < a.rows(); ++i)
          for (Index j = 0; j < a.cols(); ++j)
            if (!r.model.graph.cutoff_mask(i, j)) CHECK(a(i, j) == 0.0);
        changed = changed || a != r.model.graph.initial_adjacency;
      }
      // The last iteration's rebuild is not applied, so one iteration keeps A.
      CHECK(changed == (outer > 1));
    }
  }
}

TEST_CASE("loss totals follow their own weights") {
  const auto ds = small_synthetic();
  TrainConfig c = quick_config(Ablation::no_sm);
  c.manual_weights = LossWeights{0.7, 0.2, 5.0, 5.0};
  const TrainResult r = train(ds, c);
  CHECK(r.weights.fs == 0.0);
  CHECK(r.weights.ts == 0.0);
  for (const auto& e : r.log) {
    const auto& l = e.losses;
    CHECK(std::abs(l.total - (0.7 * l.stsm + 0.2 * l.gc)) <= 1e-9 * std::max(1.0, l.total));
  }

  const TrainResult balanced = train(ds, quick_config());
  CHECK(std::abs(balanced.log.front().losses.total - 1.0) < 1e-12);
}

TEST_CASE("forecast") {
  const auto ds = small_synthetic();
  const TrainResult r = train(ds, quick_config());
  const Index horizon = ds.num_time_steps - ds.train_end;

  const Matrix none = forecast(r.model, ds, 0);
  CHECK(none.rows() == 0);
  CHECK(none.cols() == 6);

  const Matrix f = forecast(r.model, ds, horizon);
  CHECK(f.rows() == horizon);
  CHECK(f.allFinite());
  CHECK(f.minCoeff() >= 0.0);

  SUBCASE("test labels are never read") {
    SensorDataset hidden = ds;
    hidden.label_mask.bottomRows(horizon).setConstant(false);
    hidden.labels.bottomRows(horizon).setConstant(123.0);
    CHECK(forecast(train(hidden, quick_config()).model, hidden, horizon) == f);
  }
  SUBCASE("dimension and horizon checks") {
    const auto other = random_dataset(5, 16, 3, 1, 3);
    CHECK_THROWS_WITH_AS(forecast(r.model, other, 1), "dataset has 5 locations, model expects 6",
                         InputError);
    CHECK_THROWS_AS(forecast(r.model, ds, horizon + 1), InputError);
  }
}

TEST_CASE("20-site, 2000-epoch configuration is accepted") {
  const auto ds = random_dataset(20, 49, 6, 5, 9);
  TrainConfig c;
  c.learning_rate = 0.0001;
  c.epochs = 2000;
  c.embedding_dim = 10;
  c.window = 1;
  CHECK_NOTHROW(c.validate());
  const TrainResult r = train(ds, c);
  CHECK_FALSE(r.diverged);
  CHECK(r.log.size() == 4000);
  CHECK(r.log.back().losses.stsm < r.log.front().losses.stsm);
  CHECK(forecast(r.model, ds, 9).rows() == 9);
}

TEST_CASE("invalid configurations") {
  const auto ds = small_synthetic();
  TrainConfig c = quick_config();
  c.window = 0;
  CHECK_THROWS_AS(train(ds, c), InputError);
  c = quick_config();
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(train(ds, c), InputError);
  c = quick_config();
  c.window = ds.train_end;
  CHECK_THROWS_AS(train(ds, c), InputError);
  CHECK_THROWS_AS(parse_ablation("none"), InputError);
  CHECK(parse_ablation("no_sl") == Ablation::no_sl);
}

TEST_CASE("divergence keeps the last good parameters") {
  auto ds = small_synthetic();
  ds.labels(3, 2) = 1e200;
  const TrainResult r = train(ds, quick_config());
  CHECK(r.diverged);
  CHECK(r.failure.find("non-finite") != std::string::npos);
  CHECK(flatten(r.model.params).allFinite());
}

TEST_CASE("optional training modes run") {
  const auto ds = small_synthetic();
  TrainConfig c = quick_config();
  c.validation = true;
  c.rebalance_each_outer = true;
  const TrainResult r = train(ds, c);
  CHECK_FALSE(r.diverged);
  CHECK(r.log.size() == 30);
}

TEST_CASE("checkpoint round trip") {
  const auto ds = small_synthetic();
  int checkpoints = 0;
  TrainCallbacks callbacks;
  TrainConfig c = quick_config();
  c.checkpoint_every = 10;
  callbacks.on_checkpoint = [&](int epoch, const TrainedModel&) {
    CHECK(epoch % 10 == 0);
    ++checkpoints;
  };
  const TrainResult r = train(ds, c, callbacks);
  CHECK(checkpoints == 3);

  const auto dir = temp_dir("checkpoint");
  save_checkpoint(r.model, dir / "checkpoint.json");
  const TrainedModel back = load_checkpoint(dir / "checkpoint.json");
  CHECK(flatten(back.params) == flatten(r.model.params));
  CHECK(back.params.dims.embedding == 4);
  CHECK(back.seed == 3);
  CHECK(back.train_end == r.model.train_end);
  CHECK(back.normalization.mean == r.model.normalization.mean);
  CHECK(back.graph.cutoff_mask == r.model.graph.cutoff_mask);
  for (Index t = 0; t < r.model.graph.num_steps(); ++t)
    CHECK(back.graph.current_adjacency[t] == r.model.graph.current_adjacency[t]);
  CHECK(forecast(back, ds, 3) == forecast(r.model, ds, 3));

  save_checkpoint(back, dir / "again.json");
  CHECK(sha256_file(dir / "again.json") == sha256_file(dir / "checkpoint.json"));

  std::ofstream(dir / "broken.json") << "{\"version\": \"other\"}";
  CHECK_THROWS_AS(load_checkpoint(dir / "broken.json"), InputError);
}
