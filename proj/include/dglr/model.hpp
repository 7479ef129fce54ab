// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dglr/common.hpp"
#include "dglr/graph.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

namespace dglr {

enum class Activation { elu, tanh, relu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

inline constexpr double kLeakySlope = 0.2;

template <typename Scalar>
Scalar leaky_relu(Scalar x) {
  return x > Scalar(0) ? x : Scalar(kLeakySlope) * x;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
Scalar activate(Scalar x, Activation a) {
  switch (a) {
    case Activation::elu: return x > Scalar(0) ? x : std::expm1(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > Scalar(0) ? x : Scalar(0);
  }
  return x;
}

/// d activate / dx, evaluated at the pre-activation x.
template <typename Scalar>
Scalar activate_derivative(Scalar x, Activation a) {
  switch (a) {
    case Activation::elu: return x > Scalar(0) ? Scalar(1) : std::exp(x);
    case Activation::tanh: {
      const Scalar y = std::tanh(x);
      return Scalar(1) - y * y;
    }
    case Activation::relu: return x > Scalar(0) ? Scalar(1) : Scalar(0);
  }
  return Scalar(1);
}

/// Shared projection W (K_out×K_in) and attention vector a (2·K_out).
struct GnnLayerParams {
  Matrix weight;
  Vector attention;
};

/// Per-node GRU: gates read the layer input through W_* and the previous
/// state through P_*.
struct GruCellParams {
  Matrix w_update, w_reset, w_candidate;
  Matrix p_update, p_reset, p_candidate;
  Vector b_update, b_reset, b_candidate;
};

/// Affine map from w concatenated embeddings to one value, ReLU on output.
struct HeadParams {
  Vector weight;
  Vector bias;  // size 1
};

struct ModelDims {
  Index nodes = 0;
  Index features = 0;
  Index embedding = 0;
  Index window = 1;
};

struct ModelParams {
  ModelDims dims;
  bool shared_gru = false;
  Activation activation = Activation::elu;
  GnnLayerParams layer1;
  GnnLayerParams layer2;
  /// N cells, or exactly one when shared_gru.
  std::vector<GruCellParams> gru1;
  std::vector<GruCellParams> gru2;
  HeadParams head;

  const GruCellParams& cell(int layer, Index node) const {
    const auto& cells = layer == 0 ? gru1 : gru2;
    return cells[shared_gru ? 0 : node];
  }
  GruCellParams& cell(int layer, Index node) {
    auto& cells = layer == 0 ? gru1 : gru2;
    return cells[shared_gru ? 0 : node];
  }
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) per tensor; attention uses
/// fan_in = 2K. Deterministic in seed.
ModelParams init_params(const ModelDims& dims, bool shared_gru, Activation activation,
                        std::uint64_t seed);

ModelParams zero_params(const ModelDims& dims, bool shared_gru, Activation activation);

/// Same structure, all entries zero. Used for gradients and moments.
ModelParams zeros_like(const ModelParams& params);

/// Visits every tensor in a fixed canonical order as (name, Eigen object).
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  auto layer = [&](auto& l, const std::string& prefix) {
    fn(prefix + ".weight", l.weight);
    fn(prefix + ".attention", l.attention);
  };
  auto cells = [&](auto& list, const std::string& prefix) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string base = prefix + "[" + std::to_string(i) + "].";
      auto& c = list[i];
      fn(base + "w_update", c.w_update);
      fn(base + "w_reset", c.w_reset);
      fn(base + "w_candidate", c.w_candidate);
      fn(base + "p_update", c.p_update);
      fn(base + "p_reset", c.p_reset);
      fn(base + "p_candidate", c.p_candidate);
      fn(base + "b_update", c.b_update);
      fn(base + "b_reset", c.b_reset);
      fn(base + "b_candidate", c.b_candidate);
    }
  };
  layer(p.layer1, "layer1");
  layer(p.layer2, "layer2");
  cells(p.gru1, "gru1");
  cells(p.gru2, "gru2");
  fn(std::string("head.weight"), p.head.weight);
  fn(std::string("head.bias"), p.head.bias);
}

Index parameter_count(const ModelParams& params);
Vector flatten(const ModelParams& params);
void assign_flat(ModelParams& params, const Vector& flat);
/// Name of the tensor that holds flat entry `index`.
std::string parameter_name(const ModelParams& params, Index index);

// ---------------------------------------------------------------------------
// Kernels. Templated on the scalar so oracles can run them in other precisions.

/// Attention logits e_ij = a_src·z_i + a_dst·z_j over projected rows z = W x.
template <typename Scalar>
MatrixX<Scalar> attention_scores(const MatrixX<Scalar>& projected, const VectorX<Scalar>& attention) {
  const Index k = projected.cols();
  const VectorX<Scalar> src = projected * attention.head(k);
  const VectorX<Scalar> dst = projected * attention.tail(k);
  return src.replicate(1, projected.rows()) + dst.transpose().replicate(projected.rows(), 1);
}

/// Row-wise softmax of LeakyReLU(scores) over the support {j : adjacency_ij > 0}.
template <typename Scalar>
MatrixX<Scalar> masked_softmax(const MatrixX<Scalar>& scores, const MatrixX<Scalar>& adjacency) {
  const Index n = scores.rows();
  MatrixX<Scalar> alpha = MatrixX<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < n; ++j)
      if (adjacency(i, j) > Scalar(0)) peak = std::max(peak, leaky_relu(scores(i, j)));
    if (!std::isfinite(static_cast<double>(peak)))
      throw NumericError("node " + std::to_string(i) + " has an empty neighbor set");
    Scalar total(0);
    for (Index j = 0; j < n; ++j)
      if (adjacency(i, j) > Scalar(0)) {
        alpha(i, j) = std::exp(leaky_relu(scores(i, j)) - peak);
        total += alpha(i, j);
      }
    alpha.row(i) /= total;
  }
  return alpha;
}

template <typename Scalar>
MatrixX<Scalar> attention_coefficients(const MatrixX<Scalar>& weight, const VectorX<Scalar>& attention,
                                       const MatrixX<Scalar>& input, const MatrixX<Scalar>& adjacency) {
  const MatrixX<Scalar> projected = input * weight.transpose();
  return masked_softmax<Scalar>(attention_scores<Scalar>(projected, attention), adjacency);
}

inline Matrix attention_coefficients(const GnnLayerParams& layer, const Matrix& input,
                                     const Matrix& adjacency) {
  return attention_coefficients<double>(layer.weight, layer.attention, input, adjacency);
}

/// h_i = σ( Σ_j α_ij Ã_ij W x_j ).
template <typename Scalar>
MatrixX<Scalar> gnn_forward(const MatrixX<Scalar>& weight, const VectorX<Scalar>& attention,
                            const MatrixX<Scalar>& input, const MatrixX<Scalar>& adjacency,
                            Activation activation) {
  if (input.cols() != weight.cols() || adjacency.rows() != input.rows() ||
      adjacency.cols() != input.rows() || attention.size() != 2 * weight.rows())
    throw InputError("gnn_forward: dimension mismatch");
  const MatrixX<Scalar> projected = input * weight.transpose();
  const MatrixX<Scalar> alpha =
      masked_softmax<Scalar>(attention_scores<Scalar>(projected, attention), adjacency);
  MatrixX<Scalar> pre = alpha.cwiseProduct(adjacency) * projected;
  return pre.unaryExpr([activation](Scalar x) { return activate(x, activation); });
}

inline Matrix gnn_forward(const GnnLayerParams& layer, const Matrix& input, const Matrix& adjacency,
                          Activation activation) {
  return gnn_forward<double>(layer.weight, layer.attention, input, adjacency, activation);
}

/// One GRU step returning {update, reset, candidate, next_state}. The update
/// gate reads the current input like the reset and candidate paths do.
template <typename Cell, typename InDerived, typename StateDerived>
auto gru_step_gates(const Cell& c, const Eigen::MatrixBase<InDerived>& input,
                    const Eigen::MatrixBase<StateDerived>& state) {
  using Scalar = typename InDerived::Scalar;
  using Vec = VectorX<Scalar>;
  const auto sig = [](Scalar x) { return sigmoid(x); };
  const auto tanh_fn = [](Scalar x) { return std::tanh(x); };
  const Vec u = (c.w_update * input + c.p_update * state + c.b_update).unaryExpr(sig);
  const Vec r = (c.w_reset * input + c.p_reset * state + c.b_reset).unaryExpr(sig);
  const Vec reset_state = r.cwiseProduct(state);
  const Vec h = (c.w_candidate * input + c.p_candidate * reset_state + c.b_candidate).unaryExpr(tanh_fn);
  const Vec next = (Vec::Ones(u.size()) - u).cwiseProduct(state) + u.cwiseProduct(h);
  return std::array<Vec, 4>{u, r, h, next};
}

inline Vector gru_step(const GruCellParams& cell, const Vector& input, const Vector& state) {
  if (input.size() != cell.w_update.cols() || state.size() != cell.p_update.cols())
    throw InputError("gru_step: dimension mismatch");
  return gru_step_gates(cell, input, state)[3];
}

// ---------------------------------------------------------------------------
// Full forward pass with the activations needed for backpropagation.

struct GnnCache {
  Matrix input;      // N×K_in
  Matrix projected;  // N×K, rows W x_j
  Matrix scores;     // N×N pre-LeakyReLU logits
  Matrix attention;  // N×N softmax weights, zero off-support
  Matrix pre;        // N×K
  Matrix output;     // N×K
};

struct GruCache {
  Matrix prev_state;  // N×K
  Matrix update;
  Matrix reset;
  Matrix candidate;
  Matrix state;
};

struct StepCache {
  std::array<GnnCache, 2> gnn;
  std::array<GruCache, 2> gru;
};

struct ForwardPass {
  std::vector<StepCache> steps;
  /// steps×N. Rows t < w are NaN (no prediction).
  Matrix head_pre;
  Matrix predictions;

  Index num_steps() const { return static_cast<Index>(steps.size()); }
  /// Final-layer GRU states at step t: N×K.
  const Matrix& embeddings(Index t) const { return steps[t].gru[1].state; }
};

/// Runs both GNN+GRU layers over steps [0, steps) and the prediction head for
/// every t >= w. Step t reads graph.adjacency_at(t).
ForwardPass forward_all(const ModelParams& params, const TemporalGraph& graph,
                        const MatrixSequence& features, Index steps);

}  // namespace dglr
