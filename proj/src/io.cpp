// SPDX-License-Identifier: Apache-2.0
#include "dglr/io.hpp"

#include "dglr/text.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace dglr {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
  json data = json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != rows * cols)
    throw InputError("checkpoint matrix has " + std::to_string(data.size()) + " values, expected " +
                     std::to_string(rows * cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = data[i * cols + k].get<double>();
  return m;
}

Matrix as_matrix(const Mask& mask) { return mask.cast<double>(); }

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  const auto& p = model.params;
  json j;
  j["version"] = kCheckpointVersion;
  j["dims"] = {{"N", p.dims.nodes}, {"D", p.dims.features}, {"K", p.dims.embedding}, {"w", p.dims.window}};
  j["seed"] = model.seed;
  j["shared_gru"] = p.shared_gru;
  j["activation"] = std::string(activation_name(p.activation));
  j["train_end"] = model.train_end;
  json tensors = json::array();
  for_each_tensor(p, [&](const std::string& name, const auto& t) {
    json entry = matrix_json(Matrix(t));
    entry["name"] = name;
    tensors.push_back(std::move(entry));
  });
  j["tensors"] = std::move(tensors);
  j["normalization"] = {{"mean", matrix_json(model.normalization.mean)},
                        {"stddev", matrix_json(model.normalization.stddev)}};
  json steps = json::array();
  for (const auto& a : model.graph.current_adjacency) steps.push_back(matrix_json(a));
  j["graph"] = {{"threshold_km", model.graph.threshold_km},
                {"initial_adjacency", matrix_json(model.graph.initial_adjacency)},
                {"cutoff_mask", matrix_json(as_matrix(model.graph.cutoff_mask))},
                {"current_adjacency", std::move(steps)}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("version").get<std::string>() != kCheckpointVersion)
      throw InputError("unsupported checkpoint version " + j.at("version").get<std::string>());
    TrainedModel m;
    const auto& d = j.at("dims");
    const ModelDims dims{d.at("N").get<Index>(), d.at("D").get<Index>(), d.at("K").get<Index>(),
                         d.at("w").get<Index>()};
    m.params = zero_params(dims, j.at("shared_gru").get<bool>(),
                           parse_activation(j.at("activation").get<std::string>()));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_end = j.at("train_end").get<Index>();

    const auto& tensors = j.at("tensors");
    std::size_t idx = 0;
    for_each_tensor(m.params, [&](const std::string& name, auto& t) {
      if (idx >= tensors.size() || tensors[idx].at("name").get<std::string>() != name)
        throw InputError("checkpoint tensor order mismatch at " + name);
      const Matrix v = matrix_from_json(tensors[idx]);
      if (v.rows() != t.rows() || v.cols() != t.cols())
        throw InputError("checkpoint tensor " + name + " has the wrong shape");
      t = v;
      ++idx;
    });
    if (idx != tensors.size()) throw InputError("checkpoint has extra tensors");

    m.normalization.mean = matrix_from_json(j.at("normalization").at("mean"));
    m.normalization.stddev = matrix_from_json(j.at("normalization").at("stddev"));
    const auto& g = j.at("graph");
    m.graph.threshold_km = g.at("threshold_km").get<double>();
    m.graph.initial_adjacency = matrix_from_json(g.at("initial_adjacency"));
    m.graph.cutoff_mask = matrix_from_json(g.at("cutoff_mask")).array() > 0.5;
    for (const auto& a : g.at("current_adjacency")) m.graph.current_adjacency.push_back(matrix_from_json(a));
    if (m.graph.num_nodes() != dims.nodes || m.graph.num_steps() != m.train_end)
      throw InputError("checkpoint graph does not match its dims");
    return m;
  } catch (const json::exception& e) {
    throw InputError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

void write_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "epoch,stsm,gc,fs,ts,total\n";
  for (const auto& r : log) {
    const auto& l = r.losses;
    out << r.epoch << ',' << text::format_double(l.stsm) << ',' << text::format_double(l.gc) << ','
        << text::format_double(l.fs) << ',' << text::format_double(l.ts) << ','
        << text::format_double(l.total) << '\n';
  }
}

void write_predictions(const Matrix& predictions, Index begin, Index end,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "time,location_id,prediction\n";
  for (Index t = begin; t < end; ++t)
    for (Index i = 0; i < predictions.cols(); ++i)
      if (!std::isnan(predictions(t, i)))
        out << t << ',' << i << ',' << text::format_double(predictions(t, i)) << '\n';
}

Matrix read_predictions(const std::filesystem::path& path, Index steps, Index nodes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open predictions " + path.string());
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "time,location_id,prediction")
    throw InputError(path.filename().string() + ":1: expected header time,location_id,prediction");
  Matrix out = Matrix::Constant(steps, nodes, std::numeric_limits<double>::quiet_NaN());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line));
    long long t = 0, i = 0;
    double v = 0;
    if (f.size() != 3 || !text::parse_int(f[0], t) || !text::parse_int(f[1], i) ||
        !text::parse_double(f[2], v))
      throw InputError(path.filename().string() + ":" + std::to_string(lineno) + ": malformed row");
    if (t < 0 || t >= steps || i < 0 || i >= nodes)
      throw InputError(path.filename().string() + ":" + std::to_string(lineno) +
                       ": time/location outside the dataset");
    out(t, i) = v;
  }
  return out;
}

void write_plot_data(const Matrix& predictions, const Matrix& labels, const Mask& mask,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "time,location_id,actual,predicted\n";
  for (Index i = 0; i < predictions.cols(); ++i)
    for (Index t = 0; t < predictions.rows(); ++t) {
      if (std::isnan(predictions(t, i))) continue;
      out << t << ',' << i << ',';
      if (mask(t, i)) out << text::format_double(labels(t, i));
      out << ',' << text::format_double(predictions(t, i)) << '\n';
    }
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 14> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
  return hex.str();
}

}  // namespace dglr
