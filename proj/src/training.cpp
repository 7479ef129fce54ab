// SPDX-License-Identifier: Apache-2.0
#include "dglr/training.hpp"

#include <cmath>

namespace dglr {

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::full;
  if (name == "shared") return Ablation::shared;
  if (name == "no-sl" || name == "no_sl") return Ablation::no_sl;
  if (name == "no-sm" || name == "no_sm") return Ablation::no_sm;
  throw InputError("unknown ablation '" + std::string(name) + "' (expected full|shared|no-sl|no-sm)");
}

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::shared: return "shared";
    case Ablation::no_sl: return "no-sl";
    case Ablation::no_sm: return "no-sm";
  }
  return "full";
}

void TrainConfig::validate() const {
  if (embedding_dim < 1) throw InputError("embedding dimension must be >= 1");
  if (window < 1) throw InputError("window must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("learning rate must be > 0");
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (outer_iters < 1) throw InputError("outer iterations must be >= 1");
  if (threshold_km && !(*threshold_km > 0.0)) throw InputError("threshold_km must be > 0");
  if (checkpoint_every < 1) throw InputError("checkpoint interval must be >= 1");
  if (manual_weights) {
    for (double a : manual_weights->as_array())
      if (!(a >= 0.0)) throw InputError("loss weights must be >= 0");
  }
}

std::array<bool, 4> TrainConfig::active_terms() const {
  const bool sl = structure_learning();
  const bool sm = sl && ablation != Ablation::no_sm;
  return {true, sl, sm, sm};
}

void OptimizerState::apply(Vector& params, const Vector& gradient, double learning_rate) {
  ++step;
  first_moment = beta1 * first_moment + (1.0 - beta1) * gradient;
  second_moment = beta2 * second_moment + (1.0 - beta2) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  params.array() -= learning_rate * (first_moment.array() / c1) /
                    ((second_moment.array() / c2).sqrt() + epsilon);
}

namespace {

LossWeights mask_weights(LossWeights w, const std::array<bool, 4>& active) {
  auto a = w.as_array();
  for (int k = 0; k < 4; ++k)
    if (!active[k]) a[k] = 0.0;
  return LossWeights::from_array(a);
}

double mean_training_label(const TrainingData& data) {
  double sum = 0.0;
  Index count = 0;
  for (Index t = 0; t < data.train_end; ++t)
    for (Index i = 0; i < data.labels.cols(); ++i)
      if (data.label_mask(t, i)) {
        sum += data.labels(t, i);
        ++count;
      }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Squared error on the held-out validation cells.
double validation_error(const ModelParams& params, const TemporalGraph& graph,
                        const TrainingData& data, const Mask& held_out) {
  const ForwardPass fp = forward_all(params, graph, data.features, data.train_end);
  double sum = 0.0;
  for (Index t = params.dims.window; t < data.train_end; ++t)
    for (Index i = 0; i < held_out.cols(); ++i)
      if (held_out(t, i)) {
        const double r = fp.predictions(t, i) - data.labels(t, i);
        sum += r * r;
      }
  return sum;
}

}  // namespace

TrainResult train(const SensorDataset& dataset, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
  config.validate();
  dataset.validate();
  const Index w = config.window;
  const Index steps = dataset.train_end;
  if (steps < w + 1)
    throw InputError("training interval has " + std::to_string(steps) + " steps; window " +
                     std::to_string(w) + " needs at least " + std::to_string(w + 1));

  TrainResult result;
  auto [normalized, stats] = normalize_features(dataset);
  TrainingData data = training_view(normalized);

  Mask held_out = Mask::Constant(data.label_mask.rows(), data.label_mask.cols(), false);
  if (config.validation) {
    const Index hold = std::max<Index>(1, static_cast<Index>(std::ceil(0.1 * static_cast<double>(steps))));
    for (Index t = std::max(w, steps - hold); t < steps; ++t) {
      held_out.row(t) = data.label_mask.row(t);
      data.label_mask.row(t).setConstant(false);
    }
  }

  Index labeled_steps = 0;
  for (Index t = w; t < steps; ++t)
    if (data.label_mask.row(t).any()) ++labeled_steps;
  if (labeled_steps == 0) throw InputError("no labeled training cell after the first window");

  const double threshold = config.threshold_km.value_or(default_threshold_km(dataset.distances));
  TrainedModel& model = result.model;
  model.graph = build_initial_graph(dataset.distances, threshold, steps, config.cutoff_multiplier);
  model.normalization = stats;
  model.train_end = steps;
  model.seed = config.seed;
  const ModelDims dims{dataset.num_locations, dataset.num_features, config.embedding_dim, w};
  model.params = init_params(dims, config.ablation == Ablation::shared, config.activation, config.seed);
  // Start the head at the mean label so its ReLU output is live everywhere.
  model.params.head.bias(0) = mean_training_label(data);

  const auto active = config.active_terms();
  auto choose_weights = [&]() {
    if (config.manual_weights) return mask_weights(*config.manual_weights, active);
    const LossBreakdown initial = evaluate_losses(model.params, model.graph, data, LossWeights{});
    return auto_balance_weights(initial, active);
  };

  Vector flat = flatten(model.params);
  OptimizerState adam(flat.size());
  int epoch = 0;
  ModelParams last_good = model.params;

  try {
    result.weights = choose_weights();
    for (int outer = 0; outer < config.outer_iters; ++outer) {
      if (outer > 0 && config.rebalance_each_outer) result.weights = choose_weights();

      double best_validation = std::numeric_limits<double>::infinity();
      ModelParams best_params = model.params;
      for (int e = 0; e < config.epochs; ++e, ++epoch) {
        const GradientResult g = compute_gradients(model.params, model.graph, data, result.weights);
        EpochRecord record{epoch, outer, g.losses};
        result.log.push_back(record);
        if (callbacks.on_epoch) callbacks.on_epoch(record);
        if (config.validation) {
          const double v = validation_error(model.params, model.graph, data, held_out);
          if (v < best_validation) {
            best_validation = v;
            best_params = model.params;
          }
        }

        last_good = model.params;
        adam.apply(flat, flatten(g.gradient), config.learning_rate);
        if (!flat.allFinite()) throw NumericError("parameters diverged at epoch " + std::to_string(epoch));
        assign_flat(model.params, flat);

        if (callbacks.on_checkpoint && (epoch + 1) % config.checkpoint_every == 0)
          callbacks.on_checkpoint(epoch + 1, model);
      }
      if (config.validation) {
        const double v = validation_error(model.params, model.graph, data, held_out);
        if (v >= best_validation) {
          model.params = best_params;
          flat = flatten(model.params);
        }
      }

      // The last rebuild is skipped: its graph would reach the forecast
      // without the parameters ever having been fit on it.
      if (config.structure_learning() && outer + 1 < config.outer_iters) {
        model.graph.current_adjacency = reconstruct_graphs(model.params, model.graph, data);
      }
      if (callbacks.on_outer_end) callbacks.on_outer_end(outer, model);
    }
  } catch (const NumericError& err) {
    result.diverged = true;
    result.failure = err.what();
    model.params = last_good;
  }
  return result;
}

Matrix predict_all(const TrainedModel& model, const SensorDataset& dataset, Index horizon) {
  const auto& dims = model.params.dims;
  if (dataset.num_locations != dims.nodes)
    throw InputError("dataset has " + std::to_string(dataset.num_locations) +
                     " locations, model expects " + std::to_string(dims.nodes));
  if (dataset.num_features != dims.features)
    throw InputError("dataset has " + std::to_string(dataset.num_features) +
                     " features, model expects " + std::to_string(dims.features));
  if (horizon < 0) throw InputError("horizon must be >= 0");
  const Index steps = model.train_end + horizon;
  if (dataset.num_time_steps < steps)
    throw InputError("features missing in the forecast horizon: need " + std::to_string(steps) +
                     " steps, dataset has " + std::to_string(dataset.num_time_steps));
  const SensorDataset normalized = apply_normalization(dataset, model.normalization);
  return forward_all(model.params, model.graph, normalized.features, steps).predictions;
}

Matrix forecast(const TrainedModel& model, const SensorDataset& dataset, Index horizon) {
  if (horizon == 0) return Matrix(0, model.params.dims.nodes);
  const Matrix all = predict_all(model, dataset, horizon);
  return all.bottomRows(horizon);
}

}  // namespace dglr
