// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/dataset.hpp"
#include "dglr/graph.hpp"
#include "dglr/losses.hpp"
#include "dglr/model.hpp"

#include <functional>
#include <optional>
#include <string>

namespace dglr {

enum class Ablation { full, shared, no_sl, no_sm };

Ablation parse_ablation(std::string_view name);
std::string_view ablation_name(Ablation a);

struct TrainConfig {
  Index embedding_dim = 10;
  Index window = 1;
  double learning_rate = 0.01;
  /// ADAM epochs per outer iteration.
  int epochs = 1000;
  int outer_iters = 2;
  /// Unset: auto-balance at epoch 0.
  std::optional<LossWeights> manual_weights;
  /// Re-run auto-balancing at the start of every outer iteration.
  bool rebalance_each_outer = false;
  /// Unset: mean binary degree of about 4.
  std::optional<double> threshold_km;
  /// Reconstruction cutoff as a multiple of threshold_km; <= 0 disables.
  double cutoff_multiplier = 3.0;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::full;
  Activation activation = Activation::elu;
  /// Hold out the last 10% of training steps and keep the best epoch.
  bool validation = false;
  int checkpoint_every = 100;

  void validate() const;
  bool structure_learning() const { return ablation != Ablation::no_sl; }
  /// Which of (stsm, gc, fs, ts) participate in the objective.
  std::array<bool, 4> active_terms() const;
};

/// ADAM with bias correction over a flat parameter vector.
struct OptimizerState {
  Vector first_moment;
  Vector second_moment;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit OptimizerState(Index size = 0)
      : first_moment(Vector::Zero(size)), second_moment(Vector::Zero(size)) {}
  void apply(Vector& params, const Vector& gradient, double learning_rate);
};

/// Everything the loss needs besides the parameters. `features` are already
/// normalized; only steps [0, train_end) are read.
struct TrainingData {
  MatrixSequence features;
  Matrix labels;
  Mask label_mask;
  Index train_end = 0;
};

TrainingData training_view(const SensorDataset& normalized);

struct GradientResult {
  ModelParams gradient;
  LossBreakdown losses;
};

/// Forward pass plus the four raw loss terms and their weighted total.
LossBreakdown evaluate_losses(const ModelParams& params, const TemporalGraph& graph,
                              const TrainingData& data, const LossWeights& weights);

/// Exact gradient of the weighted total with respect to every parameter.
/// The GNN reads graph.current_adjacency as data; structure terms reach the
/// parameters only through the reconstruction of the final-layer embeddings.
GradientResult compute_gradients(const ModelParams& params, const TemporalGraph& graph,
                                 const TrainingData& data, const LossWeights& weights);

/// Learned adjacency per training step from the final-layer embeddings.
MatrixSequence reconstruct_graphs(const ModelParams& params, const TemporalGraph& graph,
                                  const TrainingData& data);

struct EpochRecord {
  int epoch = 0;
  int outer_iter = 0;
  LossBreakdown losses;
};

/// Parameters and graph needed to forecast, plus the feature scaling.
struct TrainedModel {
  ModelParams params;
  TemporalGraph graph;
  NormalizationStats normalization;
  Index train_end = 0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  TrainedModel model;
  std::vector<EpochRecord> log;
  LossWeights weights;
  bool diverged = false;
  std::string failure;
};

struct TrainCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Every checkpoint_every epochs, with the parameters after that epoch.
  std::function<void(int epoch, const TrainedModel&)> on_checkpoint;
  /// After each outer iteration, with the graph the next one will train on.
  std::function<void(int outer, const TrainedModel&)> on_outer_end;
};

/// Graph-update training loop: per outer iteration, ADAM on the weighted
/// loss with the graph held fixed, then rebuild every step's graph from the
/// learned embeddings (skipped for no_sl and after the last iteration).
/// Deterministic in config.seed.
TrainResult train(const SensorDataset& dataset, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

/// Predictions for steps [train_end, train_end + horizon) as horizon×N.
/// Steps past the training window reuse the last training-step graph.
Matrix forecast(const TrainedModel& model, const SensorDataset& dataset, Index horizon);

/// In-sample and forecast predictions for steps [0, train_end + horizon);
/// rows t < w are NaN.
Matrix predict_all(const TrainedModel& model, const SensorDataset& dataset, Index horizon);

}  // namespace dglr
