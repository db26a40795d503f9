#include "harvestcast/nn.hpp"

#include <Eigen/Dense>
#include <Eigen/QR>

#include <cmath>

namespace harvestcast {

namespace {

using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

}  // namespace

Tensor selu(Tape& tape, const Tensor& x) {
  constexpr double la = SeluConstants::lambda;
  constexpr double laa = SeluConstants::lambda * SeluConstants::alpha;
  DoubleBuffer out(x.size());
  {
    ConstArrMap xv(x.values().data(), static_cast<Eigen::Index>(x.size()));
    ArrMap yv(out.data(), static_cast<Eigen::Index>(out.size()));
    yv = (xv > 0.0).select(la * xv, laa * (xv.exp() - 1.0));
  }
  const bool rg = tape.grad_enabled() && x.requires_grad();
  Tensor y = Tensor::from_buffer(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("selu", {x}, [x, y]() {
      if (!y.has_grad()) return;
      std::vector<double> dx(x.size());
      const double* xv = x.values().data();
      const double* yv = y.values().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = dy[i] * (xv[i] > 0.0 ? la : yv[i] + laa);
      }
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return y;
}

// ---- dense ------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act)
    : weights(Tensor::zeros({in, out}, true)),
      bias(Tensor::zeros({out}, true)),
      activation(act) {}

Tensor DenseLayer::forward(Tape& tape, const Tensor& x) const {
  if (x.ndim() != 2 || x.dim(1) != input_width()) {
    throw DimensionError("dense: input " + shape_to_string(x.shape()) + " for weights " +
                         shape_to_string(weights.shape()));
  }
  Tensor z = add_bias(tape, matmul(tape, x, weights), bias);
  return activation == Activation::selu ? selu(tape, z) : z;
}

// ---- lstm -------------------------------------------------------------------

LstmLayer::LstmLayer(std::size_t in, std::size_t hidden, bool return_sequences)
    : input_kernel(Tensor::zeros({in, 4 * hidden}, true)),
      recurrent_kernel(Tensor::zeros({hidden, 4 * hidden}, true)),
      bias(Tensor::zeros({4 * hidden}, true)),
      hidden_size(hidden),
      return_sequences(return_sequences) {}

std::pair<Tensor, Tensor> LstmLayer::step(Tape& tape, const Tensor& x_t, const Tensor& h_prev,
                                          const Tensor& c_prev) const {
  const std::size_t h = hidden_size;
  if (x_t.ndim() != 2 || x_t.dim(1) != input_width() || h_prev.ndim() != 2 ||
      h_prev.dim(1) != h || c_prev.ndim() != 2 || c_prev.dim(1) != h ||
      x_t.dim(0) != h_prev.dim(0) || x_t.dim(0) != c_prev.dim(0)) {
    throw DimensionError("lstm step: x " + shape_to_string(x_t.shape()) + ", h " +
                         shape_to_string(h_prev.shape()) + ", c " +
                         shape_to_string(c_prev.shape()) + " for hidden size " +
                         std::to_string(h));
  }
  Tensor gates = affine_pair(tape, x_t, input_kernel, h_prev, recurrent_kernel, bias);
  Tensor i = sigmoid(tape, slice_cols(tape, gates, 0, h));
  Tensor f = sigmoid(tape, slice_cols(tape, gates, h, 2 * h));
  Tensor g = tanh(tape, slice_cols(tape, gates, 2 * h, 3 * h));
  Tensor o = sigmoid(tape, slice_cols(tape, gates, 3 * h, 4 * h));
  Tensor c_t = add(tape, hadamard(tape, f, c_prev), hadamard(tape, i, g));
  Tensor h_t = hadamard(tape, o, tanh(tape, c_t));
  return {h_t, c_t};
}

Tensor LstmLayer::sequence(Tape& tape, const Tensor& seq) const {
  if (seq.ndim() != 3 || seq.dim(2) != input_width()) {
    throw DimensionError("lstm sequence: input " + shape_to_string(seq.shape()) +
                         " for kernel " + shape_to_string(input_kernel.shape()));
  }
  const std::size_t batch = seq.dim(0), steps = seq.dim(1);
  if (steps == 0) throw ContractError("lstm sequence: empty sequence");

  Tensor h = Tensor::zeros({batch, hidden_size});
  Tensor c = Tensor::zeros({batch, hidden_size});
  std::vector<Tensor> outputs;
  if (return_sequences) outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    auto [h_t, c_t] = step(tape, time_slice(tape, seq, t), h, c);
    h = h_t;
    c = c_t;
    if (return_sequences) outputs.push_back(h_t);
  }
  return return_sequences ? time_stack(tape, outputs) : h;
}

// ---- initialization ------------------------------------------------------------

void init_dense_params(DenseLayer& layer, std::mt19937_64& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(layer.input_width()));
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& w : layer.weights.mutable_values()) w = normal(rng);
  for (double& b : layer.bias.mutable_values()) b = 0.0;
}

namespace {

// Orthogonalize a random square block via Householder QR, sign-fixed so the
// factorization is unique.
void fill_orthogonal_block(Tensor& kernel, std::size_t h, std::size_t block,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(h, h);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < h; ++c) a(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t c = 0; c < h; ++c) {
    if (r(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  std::span<double> kv = kernel.mutable_values();
  const std::size_t row_width = 4 * h;
  for (std::size_t rr = 0; rr < h; ++rr)
    for (std::size_t cc = 0; cc < h; ++cc) kv[rr * row_width + block * h + cc] = q(rr, cc);
}

}  // namespace

void init_lstm_params(LstmLayer& layer, std::mt19937_64& rng) {
  const std::size_t in = layer.input_width();
  const std::size_t h = layer.hidden_size;

  const double limit = std::sqrt(6.0 / static_cast<double>(in + 4 * h));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  for (double& w : layer.input_kernel.mutable_values()) w = uniform(rng);

  for (std::size_t block = 0; block < 4; ++block) {
    fill_orthogonal_block(layer.recurrent_kernel, h, block, rng);
  }

  std::span<double> b = layer.bias.mutable_values();
  for (std::size_t i = 0; i < 4 * h; ++i) b[i] = 0.0;
  for (std::size_t i = h; i < 2 * h; ++i) b[i] = 1.0;  // forget gate
}

}  // namespace harvestcast
