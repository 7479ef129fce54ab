// SPDX-License-Identifier: Apache-2.0
#include "test_support.hpp"

#include <doctest.h>

#include <chrono>
#include <iostream>

using namespace dglr;
using namespace dglr::testing;

namespace {

struct Instance {
  TrainingData data;
  TemporalGraph graph;
  ModelParams params;
};

Instance make_instance(std::uint64_t seed, bool shared, bool learned_graph) {
  const SensorDataset raw = random_dataset(4, 7, 3, seed);  // 6 training steps
  auto [ds, stats] = normalize_features(raw);
  Instance in;
  in.data = training_view(ds);
  in.graph = build_initial_graph(ds.distances, default_threshold_km(ds.distances, 2.0),
                                 ds.train_end, 0.0);
  in.params = init_params({4, 3, 5, 1}, shared, Activation::elu, seed + 1);
  in.params.head.bias(0) = 0.3;
  if (learned_graph) in.graph.current_adjacency = reconstruct_graphs(in.params, in.graph, in.data);
  return in;
}

/// First instance at or after `seed` whose kinks sit well outside the
/// finite-difference probe.
Instance small_instance(std::uint64_t seed, bool shared = false, bool learned_graph = false) {
  for (std::uint64_t s = seed;; s += 1000) {
    Instance in = make_instance(s, shared, learned_graph);
    if (kink_margin(in.params, in.graph, in.data) > 1e-3) return in;
  }
}

}  // namespace

TEST_CASE("analytic gradient matches central differences with every loss term active") {
  for (std::uint64_t seed : {11u, 12u}) {
    for (bool learned : {false, true}) {
      Instance in = small_instance(seed, false, learned);
      const LossBreakdown raw = evaluate_losses(in.params, in.graph, in.data, LossWeights{});
      REQUIRE(raw.gc > 0.0);
      REQUIRE(raw.fs > 0.0);
      REQUIRE(raw.ts > 0.0);
      const LossWeights weights = auto_balance_weights(raw);

      const auto g = compute_gradients(in.params, in.graph, in.data, weights);
      const Vector numeric = finite_difference_gradient(in.params, in.graph, in.data, weights);
      const auto cmp = compare_gradients(flatten(g.gradient), numeric);
      INFO("worst " << parameter_name(in.params, cmp.worst) << " analytic " << cmp.analytic
                    << " numeric " << cmp.numeric);
      CHECK(cmp.max_relative_error <= 1e-4);
    }
  }
}

TEST_CASE("each loss term on its own has a correct gradient") {
  Instance in = small_instance(21, false, true);
  const auto raw = evaluate_losses(in.params, in.graph, in.data, {}).raw();
  for (int term = 0; term < 4; ++term) {
    std::array<double, 4> a{0, 0, 0, 0};
    a[term] = 1.0 / raw[term];
    const LossWeights w = LossWeights::from_array(a);
    const auto g = compute_gradients(in.params, in.graph, in.data, w);
    const Vector numeric = finite_difference_gradient(in.params, in.graph, in.data, w);
    const auto cmp = compare_gradients(flatten(g.gradient), numeric);
    INFO("weights " << w.stsm << w.gc << w.fs << w.ts << " worst "
                    << parameter_name(in.params, cmp.worst) << " a=" << cmp.analytic << " n=" << cmp.numeric);
    CHECK(cmp.max_relative_error <= 1e-4);
  }
}

TEST_CASE("shared GRU gradient matches central differences") {
  Instance in = small_instance(31, true);
  const LossWeights weights = auto_balance_weights(evaluate_losses(in.params, in.graph, in.data, {}));
  const auto g = compute_gradients(in.params, in.graph, in.data, weights);
  const auto cmp = compare_gradients(
      flatten(g.gradient), finite_difference_gradient(in.params, in.graph, in.data, weights));
  INFO("worst " << parameter_name(in.params, cmp.worst) << " a=" << cmp.analytic << " n=" << cmp.numeric);
  CHECK(cmp.max_relative_error <= 1e-4);
}

TEST_CASE("zero structure weights give exactly the prediction-loss gradient") {
  Instance in = small_instance(41);
  const auto structure_off = compute_gradients(in.params, in.graph, in.data, {0.7, 0, 0, 0});
  const auto stsm_only = compute_gradients(in.params, in.graph, in.data, {1, 0, 0, 0});
  CHECK((flatten(structure_off.gradient) - 0.7 * flatten(stsm_only.gradient)).cwiseAbs().maxCoeff() <
        1e-15);
}

TEST_CASE("twin nodes under a shared GRU contribute identical gradients") {
  // Nodes 0 and 1 share coordinates, features and labels; node 2 is far away.
  SensorDataset raw = random_dataset(3, 6, 2, 51);
  raw.coords.row(1) = raw.coords.row(0);
  raw.coords.row(2) << 100.0, 100.0;
  raw.distances = pairwise_distances(raw.coords, true);
  for (auto& x : raw.features) x.row(1) = x.row(0);
  raw.labels.col(1) = raw.labels.col(0);
  auto [ds, stats] = normalize_features(raw);
  const TrainingData data = training_view(ds);
  const TemporalGraph graph = build_initial_graph(ds.distances, 1.0, ds.train_end, 0.0);
  ModelParams params = init_params({3, 2, 4, 1}, true, Activation::elu, 52);
  params.head.bias(0) = 0.3;

  // Split the shared-cell gradient by node through per-node copies.
  ModelParams unshared = params;
  unshared.shared_gru = false;
  unshared.gru1.assign(3, params.gru1[0]);
  unshared.gru2.assign(3, params.gru2[0]);
  const auto g = compute_gradients(unshared, graph, data, {1, 1, 1, 1});
  for (int layer = 0; layer < 2; ++layer) {
    const auto& twin_a = layer == 0 ? g.gradient.gru1[0] : g.gradient.gru2[0];
    const auto& twin_b = layer == 0 ? g.gradient.gru1[1] : g.gradient.gru2[1];
    CHECK((twin_a.w_update - twin_b.w_update).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((twin_a.p_candidate - twin_b.p_candidate).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((twin_a.b_reset - twin_b.b_reset).cwiseAbs().maxCoeff() < 1e-12);
  }
  // The shared gradient is the sum of the per-node contributions.
  const auto shared = compute_gradients(params, graph, data, {1, 1, 1, 1});
  const Matrix summed = g.gradient.gru1[0].w_reset + g.gradient.gru1[1].w_reset + g.gradient.gru1[2].w_reset;
  CHECK((shared.gradient.gru1[0].w_reset - summed).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("non-finite gradient is reported with the parameter name") {
  Instance in = small_instance(61);
  in.params.gru2[2].b_update(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(compute_gradients(in.params, in.graph, in.data, {1, 1, 1, 1}), NumericError);
}
