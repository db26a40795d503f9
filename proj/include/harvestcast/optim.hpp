#pragma once

#include <cstdint>
#include <vector>

#include "harvestcast/tensor.hpp"

namespace harvestcast {

// Mean of |pred - target| over the batch; the subgradient at zero residual
// is 0. Both inputs are vectors of equal, nonzero length.
Tensor mae_loss(Tape& tape, const Tensor& pred, const Tensor& target);

// Adam with the conventional defaults; only the learning rate is a tunable
// in this system. One instance owns the moment buffers for one parameter set.
class AdamOptimizer {
public:
  struct Options {
    double learning_rate = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  AdamOptimizer(std::vector<Tensor> params, Options options);

  // Applies one update from the gradients currently stored on the parameters
  // (missing gradients count as zero), then clears them. Any non-finite
  // gradient aborts before touching the parameters.
  void step();

  std::uint64_t step_count() const { return step_count_; }
  const Options& options() const { return options_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  Options options_;
  std::uint64_t step_count_ = 0;
};

}  // namespace harvestcast
