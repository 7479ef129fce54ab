// SPDX-License-Identifier: Apache-2.0
#include "dglr/training.hpp"

#include <cmath>

namespace dglr {

namespace {

/// Backprop through σ(Σ_j α_ij Ã_ij W x_j). Accumulates into `grad` and
/// returns dL/dinput.
Matrix gnn_backward(const GnnLayerParams& layer, const GnnCache& c, const Matrix& adjacency,
                    const Matrix& d_output, Activation activation, GnnLayerParams& grad) {
  const Index k = layer.weight.rows();
  const Matrix d_pre = d_output.cwiseProduct(
      c.pre.unaryExpr([activation](double x) { return activate_derivative(x, activation); }));

  const Matrix coeff = c.attention.cwiseProduct(adjacency);
  Matrix d_projected = coeff.transpose() * d_pre;
  const Matrix d_alpha = (d_pre * c.projected.transpose()).cwiseProduct(adjacency);

  // Softmax rows, then LeakyReLU. Off-support α is zero so those entries vanish.
  const Vector row_dot = c.attention.cwiseProduct(d_alpha).rowwise().sum();
  Matrix d_scores = c.attention.cwiseProduct(d_alpha.colwise() - row_dot);
  d_scores = d_scores.cwiseProduct(
      c.scores.unaryExpr([](double e) { return e > 0.0 ? 1.0 : kLeakySlope; }));

  const Vector d_src = d_scores.rowwise().sum();
  const Vector d_dst = d_scores.colwise().sum().transpose();
  grad.attention.head(k) += c.projected.transpose() * d_src;
  grad.attention.tail(k) += c.projected.transpose() * d_dst;
  d_projected += d_src * layer.attention.head(k).transpose();
  d_projected += d_dst * layer.attention.tail(k).transpose();

  grad.weight += d_projected.transpose() * c.input;
  return d_projected * layer.weight;
}

/// Backprop one GRU step for every node. Returns dL/dinput; `d_state` is
/// replaced by dL/d(previous state).
Matrix gru_backward(const ModelParams& params, int layer, const GruCache& c, Matrix& d_state,
                    const Matrix& input, ModelParams& grad) {
  const Index n = c.state.rows();
  Matrix d_input(n, input.cols());
  for (Index i = 0; i < n; ++i) {
    const GruCellParams& cell = params.cell(layer, i);
    GruCellParams& g = grad.cell(layer, i);
    const Vector x = input.row(i).transpose();
    const Vector prev = c.prev_state.row(i).transpose();
    const Vector u = c.update.row(i).transpose();
    const Vector r = c.reset.row(i).transpose();
    const Vector h = c.candidate.row(i).transpose();
    const Vector ds = d_state.row(i).transpose();

    const Vector du = ds.cwiseProduct(h - prev);
    const Vector dh = ds.cwiseProduct(u);
    Vector d_prev = ds.cwiseProduct(Vector::Ones(u.size()) - u);

    const Vector da_h = dh.cwiseProduct(Vector::Ones(h.size()) - h.cwiseProduct(h));
    const Vector reset_prev = r.cwiseProduct(prev);
    g.w_candidate += da_h * x.transpose();
    g.p_candidate += da_h * reset_prev.transpose();
    g.b_candidate += da_h;
    Vector dx = cell.w_candidate.transpose() * da_h;
    const Vector d_reset_prev = cell.p_candidate.transpose() * da_h;
    const Vector dr = d_reset_prev.cwiseProduct(prev);
    d_prev += d_reset_prev.cwiseProduct(r);

    const Vector da_r = dr.cwiseProduct(r.cwiseProduct(Vector::Ones(r.size()) - r));
    g.w_reset += da_r * x.transpose();
    g.p_reset += da_r * prev.transpose();
    g.b_reset += da_r;
    dx += cell.w_reset.transpose() * da_r;
    d_prev += cell.p_reset.transpose() * da_r;

    const Vector da_u = du.cwiseProduct(u.cwiseProduct(Vector::Ones(u.size()) - u));
    g.w_update += da_u * x.transpose();
    g.p_update += da_u * prev.transpose();
    g.b_update += da_u;
    dx += cell.w_update.transpose() * da_u;
    d_prev += cell.p_update.transpose() * da_u;

    d_input.row(i) = dx.transpose();
    d_state.row(i) = d_prev.transpose();
  }
  return d_input;
}

struct StructureTerms {
  double gc = 0.0;
  double fs = 0.0;
  double ts = 0.0;
};

/// Structure losses at one step and, when `d_embeddings` is non-null, the
/// weighted gradient with respect to the embeddings.
StructureTerms structure_step(const Matrix& embeddings, const Mask& allowed, const Matrix& target,
                              const Matrix& features, const Eigen::RowVectorXd& labels,
                              const Eigen::Matrix<bool, 1, Eigen::Dynamic>& mask,
                              const LossWeights& weights, Matrix* d_embeddings) {
  const Index n = embeddings.rows();
  const Matrix gram = embeddings * embeddings.transpose();
  const Matrix raw = reconstruct_unnormalized(embeddings, allowed);
  Vector row_sum = raw.rowwise().sum();
  Matrix adjacency = raw;
  std::vector<bool> rescued(n, false);
  for (Index i = 0; i < n; ++i) {
    if (row_sum(i) > 0.0) {
      adjacency.row(i) /= row_sum(i);
    } else {
      adjacency.row(i).setZero();
      adjacency(i, i) = 1.0;
      rescued[i] = true;
    }
  }

  const Matrix feature_w = feature_distance_weights(features);
  const Matrix target_w = target_distance_weights(labels, mask);
  StructureTerms terms;
  terms.gc = graph_closeness_step(target, adjacency);
  terms.fs = adjacency.cwiseProduct(feature_w).sum();
  terms.ts = adjacency.cwiseProduct(target_w).sum();
  if (d_embeddings == nullptr) return terms;

  Matrix d_adj = Matrix::Zero(n, n);
  if (weights.gc != 0.0) d_adj += weights.gc * graph_closeness_gradient(target, adjacency);
  if (weights.fs != 0.0) d_adj += weights.fs * feature_w;
  if (weights.ts != 0.0) d_adj += weights.ts * target_w;

  Matrix d_gram = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    if (rescued[i]) continue;
    const double centered = d_adj.row(i).dot(adjacency.row(i));
    for (Index j = 0; j < n; ++j)
      if (allowed(i, j) && gram(i, j) > 0.0) d_gram(i, j) = (d_adj(i, j) - centered) / row_sum(i);
  }
  *d_embeddings += (d_gram + d_gram.transpose()) * embeddings;
  return terms;
}

LossBreakdown run(const ModelParams& params, const TemporalGraph& graph, const TrainingData& data,
                  const LossWeights& weights, ModelParams* grad) {
  const Index steps = data.train_end;
  const Index n = params.dims.nodes;
  const Index k = params.dims.embedding;
  const Index w = params.dims.window;
  if (steps < w + 1) throw InputError("training window shorter than w + 1 steps");
  if (graph.num_steps() < steps) throw InputError("graph has fewer steps than the training window");

  const ForwardPass fp = forward_all(params, graph, data.features, steps);

  LossBreakdown out;
  out.weights = weights;
  out.stsm = loss_stsm(fp.predictions, data.labels, data.label_mask, w, steps);

  MatrixSequence d_embed;
  if (grad) d_embed.assign(steps, Matrix::Zero(n, k));

  for (Index t = 0; t < steps; ++t) {
    const auto terms = structure_step(fp.embeddings(t), graph.cutoff_mask, graph.initial_adjacency,
                                      data.features[t], data.labels.row(t), data.label_mask.row(t),
                                      weights, grad ? &d_embed[t] : nullptr);
    out.gc += terms.gc;
    out.fs += terms.fs;
    out.ts += terms.ts;
  }
  out.total = weighted_total(out.raw(), weights);
  if (!grad) return out;

  // Prediction head.
  if (weights.stsm != 0.0) {
    for (Index t = w; t < steps; ++t)
      for (Index i = 0; i < n; ++i) {
        if (!data.label_mask(t, i) || !(fp.head_pre(t, i) > 0.0)) continue;
        const double d_pre = weights.stsm * 2.0 * (fp.predictions(t, i) - data.labels(t, i));
        grad->head.bias(0) += d_pre;
        for (Index j = 0; j < w; ++j) {
          const auto state = fp.embeddings(t - w + j).row(i);
          grad->head.weight.segment(j * k, k) += d_pre * state.transpose();
          d_embed[t - w + j].row(i) += d_pre * params.head.weight.segment(j * k, k).transpose();
        }
      }
  }

  // Backprop through time, layer 2 before layer 1 at each step.
  std::array<Matrix, 2> carry{Matrix::Zero(n, k), Matrix::Zero(n, k)};
  for (Index t = steps - 1; t >= 0; --t) {
    const StepCache& step = fp.steps[t];
    const Matrix& adjacency = graph.adjacency_at(t);

    carry[1] += d_embed[t];
    const Matrix d_gnn2 = gru_backward(params, 1, step.gru[1], carry[1], step.gnn[1].output, *grad);
    carry[0] += gnn_backward(params.layer2, step.gnn[1], adjacency, d_gnn2, params.activation,
                             grad->layer2);
    const Matrix d_gnn1 = gru_backward(params, 0, step.gru[0], carry[0], step.gnn[0].output, *grad);
    gnn_backward(params.layer1, step.gnn[0], adjacency, d_gnn1, params.activation, grad->layer1);
  }
  return out;
}

void require_finite(const LossBreakdown& l) {
  if (!std::isfinite(l.stsm) || !std::isfinite(l.gc) || !std::isfinite(l.fs) ||
      !std::isfinite(l.ts) || !std::isfinite(l.total))
    throw NumericError("non-finite loss");
}

}  // namespace

TrainingData training_view(const SensorDataset& normalized) {
  TrainingData data;
  data.features = normalized.features;
  data.labels = normalized.labels;
  data.label_mask = normalized.label_mask;
  data.train_end = normalized.train_end;
  // The forecast interval is never read during training.
  for (Index t = normalized.train_end; t < normalized.num_time_steps; ++t)
    data.label_mask.row(t).setConstant(false);
  return data;
}

LossBreakdown evaluate_losses(const ModelParams& params, const TemporalGraph& graph,
                              const TrainingData& data, const LossWeights& weights) {
  auto l = run(params, graph, data, weights, nullptr);
  require_finite(l);
  return l;
}

GradientResult compute_gradients(const ModelParams& params, const TemporalGraph& graph,
                                 const TrainingData& data, const LossWeights& weights) {
  GradientResult r{zeros_like(params), {}};
  r.losses = run(params, graph, data, weights, &r.gradient);
  require_finite(r.losses);
  for_each_tensor(r.gradient, [](const std::string& name, const auto& t) {
    if (!t.allFinite()) throw NumericError("non-finite gradient in " + name);
  });
  return r;
}

MatrixSequence reconstruct_graphs(const ModelParams& params, const TemporalGraph& graph,
                                  const TrainingData& data) {
  const ForwardPass fp = forward_all(params, graph, data.features, data.train_end);
  MatrixSequence out;
  out.reserve(data.train_end);
  for (Index t = 0; t < data.train_end; ++t)
    out.push_back(reconstruct_adjacency(fp.embeddings(t), graph.cutoff_mask));
  return out;
}

}  // namespace dglr
