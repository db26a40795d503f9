#include "harvestcast/optim.hpp"

#include <cmath>

namespace harvestcast {

Tensor mae_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.ndim() != 1 || target.ndim() != 1) {
    throw ContractError("mae_loss: predictions and targets must be vectors, got " +
                        shape_to_string(pred.shape()) + " and " +
                        shape_to_string(target.shape()));
  }
  if (pred.dim(0) != target.dim(0)) {
    throw DimensionError("mae_loss: " + shape_to_string(pred.shape()) + " vs " +
                         shape_to_string(target.shape()));
  }
  if (pred.dim(0) == 0) throw ContractError("mae_loss: empty batch");
  return mean(tape, abs(tape, sub(tape, pred, target)));
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options) {
  first_moment_.reserve(params_.size());
  second_moment_.reserve(params_.size());
  for (const Tensor& p : params_) {
    first_moment_.emplace_back(p.size(), 0.0);
    second_moment_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step() {
  // Validate all gradients first so a NaN leaves parameters untouched.
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient for parameter of shape " +
                           shape_to_string(p.shape()));
      }
    }
  }

  step_count_ += 1;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));

  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const bool has_grad = p.has_grad();
    std::span<const double> g = has_grad ? p.grad() : std::span<const double>();
    std::span<double> value = p.mutable_values();
    std::vector<double>& m = first_moment_[i];
    std::vector<double>& v = second_moment_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = has_grad ? g[j] : 0.0;  // absent gradient means zero
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      value[j] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
    if (has_grad) p.zero_grad();
  }
}

}  // namespace harvestcast
