#pragma once

#include <random>
#include <utility>
#include <vector>

#include "harvestcast/tensor.hpp"

namespace harvestcast {

// Fixed-point constants of the self-normalizing exponential linear unit.
// Verified by the moment-preservation test rather than trusted blindly.
struct SeluConstants {
  static constexpr double alpha = 1.6732632423543772;
  static constexpr double lambda = 1.0507009873554805;
};

// Elementwise lambda*x for x > 0, lambda*(alpha*e^x - alpha) for x <= 0.
// The derivative at exactly 0 comes from the x <= 0 branch.
Tensor selu(Tape& tape, const Tensor& x);

enum class Activation { none, selu };

struct DenseLayer {
  Tensor weights;  // [in x out]
  Tensor bias;     // [out]
  Activation activation = Activation::none;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act);

  std::size_t input_width() const { return weights.dim(0); }
  std::size_t output_width() const { return weights.dim(1); }

  // activation(x*W + b), bias broadcast across the batch.
  Tensor forward(Tape& tape, const Tensor& x) const;
};

// Standard LSTM cell without peepholes. Gate blocks inside the 4h-wide
// kernels are ordered (input, forget, candidate, output); sigmoid gates,
// tanh candidate and output squashing.
struct LstmLayer {
  Tensor input_kernel;      // [in x 4h]
  Tensor recurrent_kernel;  // [h x 4h]
  Tensor bias;              // [4h]
  std::size_t hidden_size = 0;
  bool return_sequences = false;

  LstmLayer() = default;
  LstmLayer(std::size_t in, std::size_t hidden, bool return_sequences);

  std::size_t input_width() const { return input_kernel.dim(0); }

  // One gated update: i,f,o = sigmoid(gates), g = tanh(gate),
  // c_t = f.c_prev + i.g, h_t = o.tanh(c_t). Returns (h_t, c_t).
  std::pair<Tensor, Tensor> step(Tape& tape, const Tensor& x_t, const Tensor& h_prev,
                                 const Tensor& c_prev) const;

  // seq is [batch x T x in]; h and c start at zero. Returns [batch x T x h]
  // when return_sequences, else [batch x h].
  Tensor sequence(Tape& tape, const Tensor& seq) const;
};

// Deterministic initialization given the generator state. Dense weights are
// zero-mean normal with variance 1/fan_in (what SELU self-normalization
// assumes); biases zero.
void init_dense_params(DenseLayer& layer, std::mt19937_64& rng);

// LSTM input kernel uniform +-sqrt(6/(fan_in+fan_out)); recurrent kernel
// orthogonal per gate block; biases zero except the forget-gate block = 1.
void init_lstm_params(LstmLayer& layer, std::mt19937_64& rng);

}  // namespace harvestcast
