#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "harvestcast/data.hpp"
#include "harvestcast/nn.hpp"
#include "harvestcast/tensor.hpp"

namespace harvestcast {

// Defaults reproduce the reference architecture exactly.
struct YieldNetConfig {
  std::uint32_t time_steps = 8;
  std::uint32_t dynamic_features = 3;
  std::uint32_t static_features = 65;
  std::uint32_t lstm_units = 280;
  std::uint32_t lstm_layers = 3;
  std::uint32_t dense_units = 100;
  std::uint32_t static_dense_layers = 2;
  std::uint32_t post_concat_layers = 5;
  double learning_rate = 0.0005;

  void validate() const;  // all counts >= 1, learning rate finite and positive
  bool operator==(const YieldNetConfig&) const = default;
};

// The dual-path regression network: a stacked-LSTM path over the monthly
// weather matrix and a dense path over the static soil vector, concatenated
// and pushed through a SELU trunk to a single output unit (SELU as well; the
// raw output may be negative and is clamped only at the serving boundary).
class YieldNet {
public:
  YieldNet() = default;

  static YieldNet build(const YieldNetConfig& config, std::uint64_t seed);

  const YieldNetConfig& config() const { return config_; }

  // Batched forward pass: dynamic [b x T x d], static [b x s] -> [b x 1].
  // Inputs must already be normalized with the stored statistics; outputs are
  // on the standardized label scale.
  Tensor forward(Tape& tape, const Tensor& dynamic, const Tensor& static_input) const;

  // Maps a standardized output back to kg/ha.
  double denormalize_label(double standardized) const {
    return stats_.label_mean + stats_.label_std * standardized;
  }

  // Single-point convenience: dynamic [T x d], static [s] -> yield in kg/ha.
  double predict(const Tensor& dynamic, const Tensor& static_input) const;

  // Per-sample widths of the intermediate tensors of one forward pass, in
  // graph order (LSTM path, static path, concat, trunk, output).
  std::vector<Shape> shape_chain() const;

  std::size_t param_count() const;
  std::vector<std::size_t> per_layer_param_counts() const;

  // Parameter tensors in fixed serialization order (LSTM layers first, then
  // static path, trunk, output; each layer's tensors in declaration order).
  std::vector<Tensor> parameters() const;
  void zero_grads() const;

  std::size_t lstm_layer_count() const { return lstm_.size(); }
  std::size_t dense_layer_count() const { return static_path_.size() + trunk_.size() + 1; }
  const LstmLayer& lstm_layer(std::size_t i) const { return lstm_[i]; }

  const NormStats& norm_stats() const { return stats_; }
  void set_norm_stats(const NormStats& stats) { stats_ = stats; }

  // Deep copy with freshly allocated parameter buffers.
  YieldNet clone() const;

private:
  YieldNetConfig config_;
  std::vector<LstmLayer> lstm_;
  std::vector<DenseLayer> static_path_;
  std::vector<DenseLayer> trunk_;
  DenseLayer output_;
  NormStats stats_;
};

// Checkpoint file: magic "YNET", version u16, config block, normalization
// block, parameters as little-endian f64 in fixed layer order, and a trailing
// u64 holding the total file length. Round trips are bit-exact.
void save_checkpoint(const YieldNet& net, const std::filesystem::path& path);
YieldNet load_checkpoint(const std::filesystem::path& path);

}  // namespace harvestcast
