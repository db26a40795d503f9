#include "harvestcast/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace harvestcast {

void YieldNetConfig::validate() const {
  auto positive = [](std::uint32_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("config: ") + name + " must be >= 1");
  };
  positive(time_steps, "time_steps");
  positive(dynamic_features, "dynamic_features");
  positive(static_features, "static_features");
  positive(lstm_units, "lstm_units");
  positive(lstm_layers, "lstm_layers");
  positive(dense_units, "dense_units");
  positive(static_dense_layers, "static_dense_layers");
  positive(post_concat_layers, "post_concat_layers");
  if (!std::isfinite(learning_rate) || learning_rate <= 0.0) {
    throw ContractError("config: learning_rate must be finite and positive");
  }
}

YieldNet YieldNet::build(const YieldNetConfig& config, std::uint64_t seed) {
  config.validate();
  YieldNet net;
  net.config_ = config;

  for (std::uint32_t i = 0; i < config.lstm_layers; ++i) {
    const std::size_t in = i == 0 ? config.dynamic_features : config.lstm_units;
    const bool return_sequences = i + 1 < config.lstm_layers;
    net.lstm_.emplace_back(in, config.lstm_units, return_sequences);
  }
  for (std::uint32_t i = 0; i < config.static_dense_layers; ++i) {
    const std::size_t in = i == 0 ? config.static_features : config.dense_units;
    net.static_path_.emplace_back(in, config.dense_units, Activation::selu);
  }
  for (std::uint32_t i = 0; i < config.post_concat_layers; ++i) {
    const std::size_t in = i == 0 ? config.lstm_units + config.dense_units : config.dense_units;
    net.trunk_.emplace_back(in, config.dense_units, Activation::selu);
  }
  net.output_ = DenseLayer(config.dense_units, 1, Activation::selu);

  std::mt19937_64 rng(seed);
  for (auto& layer : net.lstm_) init_lstm_params(layer, rng);
  for (auto& layer : net.static_path_) init_dense_params(layer, rng);
  for (auto& layer : net.trunk_) init_dense_params(layer, rng);
  init_dense_params(net.output_, rng);
  return net;
}

Tensor YieldNet::forward(Tape& tape, const Tensor& dynamic, const Tensor& static_input) const {
  if (dynamic.ndim() != 3 || dynamic.dim(1) != config_.time_steps ||
      dynamic.dim(2) != config_.dynamic_features) {
    throw DimensionError("forward: dynamic input " + shape_to_string(dynamic.shape()) +
                         ", expected batch x " + std::to_string(config_.time_steps) + " x " +
                         std::to_string(config_.dynamic_features));
  }
  if (static_input.ndim() != 2 || static_input.dim(1) != config_.static_features) {
    throw DimensionError("forward: static input " + shape_to_string(static_input.shape()) +
                         ", expected batch x " + std::to_string(config_.static_features));
  }
  if (dynamic.dim(0) != static_input.dim(0)) {
    throw DimensionError("forward: batch sizes disagree, " + shape_to_string(dynamic.shape()) +
                         " vs " + shape_to_string(static_input.shape()));
  }

  Tensor x = dynamic;
  for (const LstmLayer& layer : lstm_) x = layer.sequence(tape, x);

  Tensor s = static_input;
  for (const DenseLayer& layer : static_path_) s = layer.forward(tape, s);

  Tensor joined = concat(tape, x, s);
  for (const DenseLayer& layer : trunk_) joined = layer.forward(tape, joined);
  return output_.forward(tape, joined);
}

double YieldNet::predict(const Tensor& dynamic, const Tensor& static_input) const {
  if (dynamic.ndim() != 2 || dynamic.dim(0) != config_.time_steps ||
      dynamic.dim(1) != config_.dynamic_features) {
    throw DimensionError("predict: dynamic input " + shape_to_string(dynamic.shape()) +
                         ", expected " + std::to_string(config_.time_steps) + " x " +
                         std::to_string(config_.dynamic_features));
  }
  if (static_input.ndim() != 1 || static_input.dim(0) != config_.static_features) {
    throw DimensionError("predict: static input " + shape_to_string(static_input.shape()) +
                         ", expected vector of " + std::to_string(config_.static_features));
  }
  dynamic.ensure_finite("predict: dynamic input");
  static_input.ensure_finite("predict: static input");

  Tape tape(/*grad_enabled=*/false);
  Tensor dyn = reshape(tape, dynamic, {1, config_.time_steps, config_.dynamic_features});
  Tensor sta = reshape(tape, static_input, {1, config_.static_features});
  return denormalize_label(forward(tape, dyn, sta).item());
}

std::vector<Shape> YieldNet::shape_chain() const {
  std::vector<Shape> chain;
  for (const LstmLayer& layer : lstm_) {
    if (layer.return_sequences) {
      chain.push_back({config_.time_steps, layer.hidden_size});
    } else {
      chain.push_back({layer.hidden_size});
    }
  }
  for (const DenseLayer& layer : static_path_) chain.push_back({layer.output_width()});
  chain.push_back({config_.lstm_units + config_.dense_units});
  for (const DenseLayer& layer : trunk_) chain.push_back({layer.output_width()});
  chain.push_back({output_.output_width()});
  return chain;
}

std::vector<std::size_t> YieldNet::per_layer_param_counts() const {
  std::vector<std::size_t> counts;
  for (const LstmLayer& layer : lstm_) {
    counts.push_back(layer.input_kernel.size() + layer.recurrent_kernel.size() +
                     layer.bias.size());
  }
  for (const DenseLayer& layer : static_path_)
    counts.push_back(layer.weights.size() + layer.bias.size());
  for (const DenseLayer& layer : trunk_)
    counts.push_back(layer.weights.size() + layer.bias.size());
  counts.push_back(output_.weights.size() + output_.bias.size());
  return counts;
}

std::size_t YieldNet::param_count() const {
  std::size_t total = 0;
  for (std::size_t c : per_layer_param_counts()) total += c;
  return total;
}

std::vector<Tensor> YieldNet::parameters() const {
  std::vector<Tensor> params;
  for (const LstmLayer& layer : lstm_) {
    params.push_back(layer.input_kernel);
    params.push_back(layer.recurrent_kernel);
    params.push_back(layer.bias);
  }
  for (const DenseLayer& layer : static_path_) {
    params.push_back(layer.weights);
    params.push_back(layer.bias);
  }
  for (const DenseLayer& layer : trunk_) {
    params.push_back(layer.weights);
    params.push_back(layer.bias);
  }
  params.push_back(output_.weights);
  params.push_back(output_.bias);
  return params;
}

void YieldNet::zero_grads() const {
  for (Tensor p : parameters()) p.zero_grad();
}

YieldNet YieldNet::clone() const {
  YieldNet copy = *this;
  auto deep = [](Tensor& t) {
    Tensor fresh = t.clone();
    fresh.set_requires_grad(t.requires_grad());
    t = fresh;
  };
  for (LstmLayer& layer : copy.lstm_) {
    deep(layer.input_kernel);
    deep(layer.recurrent_kernel);
    deep(layer.bias);
  }
  for (DenseLayer& layer : copy.static_path_) {
    deep(layer.weights);
    deep(layer.bias);
  }
  for (DenseLayer& layer : copy.trunk_) {
    deep(layer.weights);
    deep(layer.bias);
  }
  deep(copy.output_.weights);
  deep(copy.output_.bias);
  return copy;
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'Y', 'N', 'E', 'T'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("checkpoint: unexpected end of file");
  return value;
}

void write_doubles(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> values) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw FormatError("checkpoint: unexpected end of file");
}

}  // namespace

void save_checkpoint(const YieldNet& net, const std::filesystem::path& path) {
  if (net.config().static_features != kStaticFeatureCount ||
      net.config().time_steps * net.config().dynamic_features != kDynamicFeatureCount) {
    throw ContractError("checkpoint: only nets matching the sample schema are serializable");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());

  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);

  const YieldNetConfig& c = net.config();
  write_raw(out, c.time_steps);
  write_raw(out, c.dynamic_features);
  write_raw(out, c.static_features);
  write_raw(out, c.lstm_units);
  write_raw(out, c.lstm_layers);
  write_raw(out, c.dense_units);
  write_raw(out, c.static_dense_layers);
  write_raw(out, c.post_concat_layers);
  write_raw(out, c.learning_rate);

  const NormStats& stats = net.norm_stats();
  write_raw(out, static_cast<std::uint32_t>(stats.static_mean.size()));
  write_doubles(out, stats.static_mean);
  write_doubles(out, stats.static_std);
  write_raw(out, static_cast<std::uint32_t>(stats.dynamic_mean.size()));
  write_doubles(out, stats.dynamic_mean);
  write_doubles(out, stats.dynamic_std);
  write_raw(out, stats.label_mean);
  write_raw(out, stats.label_std);

  for (const Tensor& p : net.parameters()) write_doubles(out, p.values());

  // Trailer: total file length including the trailer itself.
  const std::uint64_t length = static_cast<std::uint64_t>(out.tellp()) + sizeof(std::uint64_t);
  write_raw(out, length);
  out.flush();
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

YieldNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + path.string());

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic in " + path.string());
  }
  const auto version = read_raw<std::uint16_t>(in);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  YieldNetConfig c;
  c.time_steps = read_raw<std::uint32_t>(in);
  c.dynamic_features = read_raw<std::uint32_t>(in);
  c.static_features = read_raw<std::uint32_t>(in);
  c.lstm_units = read_raw<std::uint32_t>(in);
  c.lstm_layers = read_raw<std::uint32_t>(in);
  c.dense_units = read_raw<std::uint32_t>(in);
  c.static_dense_layers = read_raw<std::uint32_t>(in);
  c.post_concat_layers = read_raw<std::uint32_t>(in);
  c.learning_rate = read_raw<double>(in);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: invalid config block: ") + e.what());
  }
  if (c.static_features != kStaticFeatureCount ||
      c.time_steps * c.dynamic_features != kDynamicFeatureCount) {
    throw FormatError("checkpoint: feature layout does not match the sample schema");
  }

  NormStats stats;
  if (read_raw<std::uint32_t>(in) != stats.static_mean.size()) {
    throw FormatError("checkpoint: unexpected static normalization block size");
  }
  read_doubles(in, stats.static_mean);
  read_doubles(in, stats.static_std);
  if (read_raw<std::uint32_t>(in) != stats.dynamic_mean.size()) {
    throw FormatError("checkpoint: unexpected dynamic normalization block size");
  }
  read_doubles(in, stats.dynamic_mean);
  read_doubles(in, stats.dynamic_std);
  stats.label_mean = read_raw<double>(in);
  stats.label_std = read_raw<double>(in);
  for (std::size_t i = 0; i < stats.static_std.size(); ++i) {
    if (stats.static_std[i] == 0.0) stats.dropped_features.push_back(static_feature_name(i));
  }
  for (std::size_t i = 0; i < stats.dynamic_std.size(); ++i) {
    if (stats.dynamic_std[i] == 0.0) stats.dropped_features.push_back(dynamic_feature_name(i));
  }

  // Parameters are not seeded here; build then overwrite.
  YieldNet net = YieldNet::build(c, 0);
  net.set_norm_stats(stats);
  for (Tensor p : net.parameters()) read_doubles(in, p.mutable_values());

  const auto stored_length = read_raw<std::uint64_t>(in);
  const auto position = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::end);
  const auto actual_length = static_cast<std::uint64_t>(in.tellg());
  if (stored_length != actual_length || position != actual_length) {
    throw FormatError("checkpoint: length mismatch (stored " + std::to_string(stored_length) +
                      ", actual " + std::to_string(actual_length) + ")");
  }
  for (const Tensor& p : net.parameters()) p.ensure_finite("checkpoint: parameters");
  return net;
}

}  // namespace harvestcast
