// SPDX-License-Identifier: Apache-2.0
#include "dglr/model.hpp"

#include <random>

namespace dglr {

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::elu;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw InputError("unknown activation '" + std::string(name) + "' (expected elu|tanh|relu)");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "elu";
}

namespace {

GruCellParams make_cell(Index k, Index in) {
  GruCellParams c;
  c.w_update = c.w_reset = c.w_candidate = Matrix::Zero(k, in);
  c.p_update = c.p_reset = c.p_candidate = Matrix::Zero(k, k);
  c.b_update = c.b_reset = c.b_candidate = Vector::Zero(k);
  return c;
}

}  // namespace

ModelParams zero_params(const ModelDims& dims, bool shared_gru, Activation activation) {
  if (dims.nodes < 1 || dims.features < 1 || dims.embedding < 1 || dims.window < 1)
    throw InputError("model dimensions must be positive");
  const Index k = dims.embedding;
  ModelParams p;
  p.dims = dims;
  p.shared_gru = shared_gru;
  p.activation = activation;
  p.layer1 = {Matrix::Zero(k, dims.features), Vector::Zero(2 * k)};
  p.layer2 = {Matrix::Zero(k, k), Vector::Zero(2 * k)};
  const Index cells = shared_gru ? 1 : dims.nodes;
  p.gru1.assign(cells, make_cell(k, k));
  p.gru2.assign(cells, make_cell(k, k));
  p.head = {Vector::Zero(dims.window * k), Vector::Zero(1)};
  return p;
}

ModelParams init_params(const ModelDims& dims, bool shared_gru, Activation activation,
                        std::uint64_t seed) {
  ModelParams p = zero_params(dims, shared_gru, activation);
  std::mt19937_64 rng(seed);
  const double k = static_cast<double>(dims.embedding);
  for_each_tensor(p, [&](const std::string& name, auto& tensor) {
    double fan_in = static_cast<double>(tensor.cols());
    if (name.ends_with(".attention")) fan_in = 2.0 * k;
    else if (name.starts_with("gru") && name.find(".b_") != std::string::npos) fan_in = k;
    else if (name == "head.weight") fan_in = static_cast<double>(tensor.size());
    else if (name == "head.bias") fan_in = static_cast<double>(p.head.weight.size());
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < tensor.size(); ++i) tensor.data()[i] = dist(rng);
  });
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  return zero_params(params.dims, params.shared_gru, params.activation);
}

Index parameter_count(const ModelParams& params) {
  Index total = 0;
  for_each_tensor(params, [&](const std::string&, const auto& t) { total += t.size(); });
  return total;
}

Vector flatten(const ModelParams& params) {
  Vector flat(parameter_count(params));
  Index offset = 0;
  for_each_tensor(params, [&](const std::string&, const auto& t) {
    flat.segment(offset, t.size()) = Eigen::Map<const Vector>(t.data(), t.size());
    offset += t.size();
  });
  return flat;
}

void assign_flat(ModelParams& params, const Vector& flat) {
  if (flat.size() != parameter_count(params)) throw InputError("flat parameter size mismatch");
  Index offset = 0;
  for_each_tensor(params, [&](const std::string&, auto& t) {
    Eigen::Map<Vector>(t.data(), t.size()) = flat.segment(offset, t.size());
    offset += t.size();
  });
}

std::string parameter_name(const ModelParams& params, Index index) {
  std::string found;
  Index offset = 0;
  for_each_tensor(params, [&](const std::string& name, const auto& t) {
    if (found.empty() && index < offset + t.size())
      found = name + "[" + std::to_string(index - offset) + "]";
    offset += t.size();
  });
  return found;
}

ForwardPass forward_all(const ModelParams& params, const TemporalGraph& graph,
                        const MatrixSequence& features, Index steps) {
  const auto& dims = params.dims;
  const Index n = dims.nodes;
  const Index k = dims.embedding;
  const Index w = dims.window;
  if (steps < 1 || static_cast<Index>(features.size()) < steps)
    throw InputError("forward_all: need features for " + std::to_string(steps) + " steps");
  if (graph.num_nodes() != n) throw InputError("forward_all: graph has wrong node count");

  ForwardPass fp;
  fp.steps.resize(steps);
  fp.head_pre = Matrix::Constant(steps, n, std::numeric_limits<double>::quiet_NaN());
  fp.predictions = fp.head_pre;

  std::array<Matrix, 2> state{Matrix::Zero(n, k), Matrix::Zero(n, k)};
  const std::array<const GnnLayerParams*, 2> layers{&params.layer1, &params.layer2};

  for (Index t = 0; t < steps; ++t) {
    const Matrix& adjacency = graph.adjacency_at(t);
    auto& step = fp.steps[t];
    const Matrix* input = &features[t];
    if (input->rows() != n || input->cols() != dims.features)
      throw InputError("forward_all: feature matrix at step " + std::to_string(t) + " is not N x D");

    for (int l = 0; l < 2; ++l) {
      auto& g = step.gnn[l];
      g.input = *input;
      g.projected = g.input * layers[l]->weight.transpose();
      if (!g.projected.allFinite())
        throw NumericError("non-finite activation at step " + std::to_string(t) + ", GNN layer " +
                           std::to_string(l + 1));
      g.scores = attention_scores<double>(g.projected, layers[l]->attention);
      g.attention = masked_softmax<double>(g.scores, adjacency);
      g.pre = g.attention.cwiseProduct(adjacency) * g.projected;
      g.output = g.pre.unaryExpr([&](double x) { return activate(x, params.activation); });
      if (!g.output.allFinite())
        throw NumericError("non-finite activation at step " + std::to_string(t) + ", GNN layer " +
                           std::to_string(l + 1));

      auto& r = step.gru[l];
      r.prev_state = state[l];
      r.update.resize(n, k);
      r.reset.resize(n, k);
      r.candidate.resize(n, k);
      r.state.resize(n, k);
      for (Index i = 0; i < n; ++i) {
        const auto gates = gru_step_gates(params.cell(l, i), g.output.row(i).transpose(),
                                          r.prev_state.row(i).transpose());
        r.update.row(i) = gates[0].transpose();
        r.reset.row(i) = gates[1].transpose();
        r.candidate.row(i) = gates[2].transpose();
        r.state.row(i) = gates[3].transpose();
      }
      if (!r.state.allFinite())
        throw NumericError("non-finite activation at step " + std::to_string(t) + ", GRU layer " +
                           std::to_string(l + 1));
      state[l] = r.state;
      input = &r.state;
    }

    if (t >= w) {
      for (Index i = 0; i < n; ++i) {
        double z = params.head.bias(0);
        for (Index j = 0; j < w; ++j)
          z += params.head.weight.segment(j * k, k).dot(fp.steps[t - w + j].gru[1].state.row(i));
        fp.head_pre(t, i) = z;
        fp.predictions(t, i) = z > 0.0 ? z : 0.0;
      }
    }
  }
  return fp;
}

}  // namespace dglr
