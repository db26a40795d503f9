#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "harvestcast/nn.hpp"

using namespace harvestcast;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = normal(rng);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void randomize(Tensor t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& v : t.mutable_values()) v = normal(rng);
}

}  // namespace

TEST_CASE("selu values") {
  Tape tape;
  Tensor x = Tensor::from_data({3}, {0.0, 1.0, -1.0});
  Tensor y = selu(tape, x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == doctest::Approx(1.0507009873554805).epsilon(1e-14));
  CHECK(y.values()[2] == doctest::Approx(-1.1113307378125627).epsilon(1e-12));
}

TEST_CASE("selu derivative at the kink comes from the non-positive branch") {
  Tensor zero = Tensor::from_data({1}, {0.0});
  zero.set_requires_grad(true);
  Tape tape;
  Tensor loss = mean(tape, selu(tape, zero));
  backprop(tape, loss);
  CHECK(zero.grad()[0] ==
        doctest::Approx(SeluConstants::lambda * SeluConstants::alpha).epsilon(1e-14));
}

TEST_CASE("dense layer forward") {
  Tape tape;
  SUBCASE("identity weights") {
    DenseLayer layer(3, 3, Activation::none);
    std::span<double> w = layer.weights.mutable_values();
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor y = layer.forward(tape, x);
    CHECK(std::memcmp(y.values().data(), x.values().data(), sizeof(double) * 6) == 0);
  }
  SUBCASE("hand example") {
    DenseLayer layer(2, 1, Activation::none);
    layer.weights.mutable_values()[0] = 1.0;
    layer.weights.mutable_values()[1] = 1.0;
    layer.bias.mutable_values()[0] = 1.0;
    Tensor x = Tensor::from_data({1, 2}, {2.0, 3.0});
    CHECK(layer.forward(tape, x).values()[0] == 6.0);
  }
  SUBCASE("width mismatch") {
    DenseLayer layer(4, 2, Activation::none);
    CHECK_THROWS_AS(layer.forward(tape, Tensor::zeros({1, 3})), DimensionError);
  }
  SUBCASE("static path widths") {
    DenseLayer layer(65, 100, Activation::selu);
    CHECK(layer.forward(tape, Tensor::zeros({4, 65})).shape() == Shape{4, 100});
  }
}

TEST_CASE("lstm step closed forms") {
  SUBCASE("all parameters zero") {
    LstmLayer layer(3, 4, false);
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor h0 = Tensor::zeros({2, 4});
    Tensor c0 = random_tensor({2, 4}, rng);
    Tape tape;
    auto [h, c] = layer.step(tape, x, h0, c0);
    for (std::size_t i = 0; i < 8; ++i) {
      // i = f = o = sigmoid(0) = 0.5 and g = tanh(0) = 0
      CHECK(c.values()[i] == doctest::Approx(0.5 * c0.values()[i]).epsilon(1e-14));
      CHECK(h.values()[i] ==
            doctest::Approx(0.5 * std::tanh(0.5 * c0.values()[i])).epsilon(1e-12));
    }
  }
  SUBCASE("zero state and zero input give zero output") {
    LstmLayer layer(3, 4, false);
    Tape tape;
    auto [h, c] = layer.step(tape, Tensor::zeros({1, 3}), Tensor::zeros({1, 4}),
                             Tensor::zeros({1, 4}));
    for (double v : h.values()) CHECK(v == 0.0);
    for (double v : c.values()) CHECK(v == 0.0);
  }
  SUBCASE("saturated forget gate preserves the cell state") {
    LstmLayer layer(1, 1, false);
    layer.bias.mutable_values()[1] = 50.0;  // forget-gate block
    Tensor c0 = Tensor::from_data({1, 1}, {0.75});
    Tape tape;
    auto [h, c] = layer.step(tape, Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), c0);
    CHECK(c.values()[0] == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("dimension mismatch") {
    LstmLayer layer(3, 4, false);
    Tape tape;
    CHECK_THROWS_AS(
        layer.step(tape, Tensor::zeros({1, 2}), Tensor::zeros({1, 4}), Tensor::zeros({1, 4})),
        DimensionError);
  }
}

TEST_CASE("lstm sequence") {
  std::mt19937_64 rng(21);
  SUBCASE("one step equals a single lstm step") {
    LstmLayer layer(3, 5, false);
    randomize(layer.input_kernel, rng, 0.4);
    randomize(layer.recurrent_kernel, rng, 0.4);
    Tensor seq = random_tensor({2, 1, 3}, rng);

    Tape tape;
    Tensor h_seq = layer.sequence(tape, seq);
    Tensor x0 = time_slice(tape, seq, 0);
    auto [h_step, c_step] = layer.step(tape, x0, Tensor::zeros({2, 5}), Tensor::zeros({2, 5}));
    CHECK(std::memcmp(h_seq.values().data(), h_step.values().data(), sizeof(double) * 10) == 0);
  }
  SUBCASE("reference shapes") {
    LstmLayer layer(3, 280, true);
    Tape tape;
    CHECK(layer.sequence(tape, Tensor::zeros({1, 8, 3})).shape() == Shape{1, 8, 280});
  }
  SUBCASE("zero weights give zero hidden state for any input") {
    LstmLayer layer(3, 4, false);
    Tensor seq = random_tensor({2, 6, 3}, rng);
    Tape tape;
    Tensor h = layer.sequence(tape, seq);
    for (double v : h.values()) CHECK(v == 0.0);
  }
  SUBCASE("return_sequences=false equals the last row of return_sequences=true") {
    LstmLayer all(4, 6, true);
    randomize(all.input_kernel, rng, 0.3);
    randomize(all.recurrent_kernel, rng, 0.3);
    randomize(all.bias, rng, 0.1);
    LstmLayer last = all;
    last.return_sequences = false;

    Tensor seq = random_tensor({3, 5, 4}, rng);
    Tape tape;
    Tensor full = all.sequence(tape, seq);
    Tensor tail = last.sequence(tape, seq);
    Tensor expected = time_slice(tape, full, 4);
    CHECK(std::memcmp(tail.values().data(), expected.values().data(), sizeof(double) * 18) == 0);
  }
  SUBCASE("empty sequence") {
    LstmLayer layer(3, 4, false);
    Tape tape;
    CHECK_THROWS_AS(layer.sequence(tape, Tensor::zeros({2, 0, 3})), ContractError);
  }
}

TEST_CASE("cell state bound |c_t| <= |c_prev| + 1") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    LstmLayer layer(3, 6, false);
    randomize(layer.input_kernel, rng, 2.0);
    randomize(layer.recurrent_kernel, rng, 2.0);
    randomize(layer.bias, rng, 2.0);
    Tensor x = random_tensor({2, 3}, rng, 3.0);
    Tensor h0 = random_tensor({2, 6}, rng);
    Tensor c0 = random_tensor({2, 6}, rng, 2.0);
    Tape tape;
    auto [h, c] = layer.step(tape, x, h0, c0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(std::abs(c.values()[i]) <= std::abs(c0.values()[i]) + 1.0 + 1e-12);
    }
  }
}

TEST_CASE("lstm step gradient check") {
  std::mt19937_64 rng(41);
  LstmLayer layer(3, 4, false);
  randomize(layer.input_kernel, rng, 0.5);
  randomize(layer.recurrent_kernel, rng, 0.5);
  randomize(layer.bias, rng, 0.2);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor h0 = random_tensor({2, 4}, rng);
  Tensor c0 = random_tensor({2, 4}, rng);

  auto loss_with = [&](Tape& tape, const LstmLayer& l, const Tensor& xp, const Tensor& hp,
                       const Tensor& cp) {
    auto [h, c] = l.step(tape, xp, hp, cp);
    return mean(tape, add(tape, h, c));
  };

  // with respect to the input, states and every parameter tensor
  CHECK(grad_check([&](Tape& t, const Tensor& p) { return loss_with(t, layer, p, h0, c0); }, x,
                   1e-4) < 1e-4);
  CHECK(grad_check([&](Tape& t, const Tensor& p) { return loss_with(t, layer, x, p, c0); }, h0,
                   1e-4) < 1e-4);
  CHECK(grad_check([&](Tape& t, const Tensor& p) { return loss_with(t, layer, x, h0, p); }, c0,
                   1e-4) < 1e-4);

  auto param_check = [&](Tensor LstmLayer::* member) {
    return grad_check(
        [&](Tape& t, const Tensor& p) {
          LstmLayer probe = layer;
          probe.*member = p;
          return loss_with(t, probe, x, h0, c0);
        },
        layer.*member, 1e-4);
  };
  CHECK(param_check(&LstmLayer::input_kernel) < 1e-4);
  CHECK(param_check(&LstmLayer::recurrent_kernel) < 1e-4);
  CHECK(param_check(&LstmLayer::bias) < 1e-4);
}

TEST_CASE("initialization") {
  SUBCASE("deterministic given the seed") {
    std::mt19937_64 a(77), b(77);
    DenseLayer la(65, 100, Activation::selu), lb(65, 100, Activation::selu);
    init_dense_params(la, a);
    init_dense_params(lb, b);
    CHECK(std::memcmp(la.weights.values().data(), lb.weights.values().data(),
                      sizeof(double) * la.weights.size()) == 0);
  }
  SUBCASE("dense variance close to 1/fan_in") {
    std::mt19937_64 rng(123);
    DenseLayer layer(65, 100, Activation::selu);
    init_dense_params(layer, rng);
    double sum = 0.0, sq = 0.0;
    for (double w : layer.weights.values()) {
      sum += w;
      sq += w * w;
    }
    const double n = static_cast<double>(layer.weights.size());
    const double variance = sq / n - (sum / n) * (sum / n);
    CHECK(variance == doctest::Approx(1.0 / 65.0).epsilon(0.2));
    for (double b : layer.bias.values()) CHECK(b == 0.0);
  }
  SUBCASE("forget-gate bias block is all ones") {
    std::mt19937_64 rng(5);
    LstmLayer layer(3, 7, true);
    init_lstm_params(layer, rng);
    std::span<const double> b = layer.bias.values();
    for (std::size_t i = 0; i < 7; ++i) CHECK(b[i] == 0.0);
    for (std::size_t i = 7; i < 14; ++i) CHECK(b[i] == 1.0);
    for (std::size_t i = 14; i < 28; ++i) CHECK(b[i] == 0.0);
  }
  SUBCASE("input kernel bounded by the uniform limit") {
    std::mt19937_64 rng(6);
    LstmLayer layer(3, 8, true);
    init_lstm_params(layer, rng);
    const double limit = std::sqrt(6.0 / (3.0 + 32.0));
    for (double w : layer.input_kernel.values()) CHECK(std::abs(w) <= limit);
  }
  SUBCASE("recurrent kernel blocks are orthogonal") {
    std::mt19937_64 rng(7);
    LstmLayer layer(3, 10, true);
    init_lstm_params(layer, rng);
    std::span<const double> k = layer.recurrent_kernel.values();
    for (std::size_t block = 0; block < 4; ++block) {
      for (std::size_t c1 = 0; c1 < 10; ++c1) {
        for (std::size_t c2 = 0; c2 < 10; ++c2) {
          double dot = 0.0;
          for (std::size_t r = 0; r < 10; ++r) {
            dot += k[r * 40 + block * 10 + c1] * k[r * 40 + block * 10 + c2];
          }
          CHECK(dot == doctest::Approx(c1 == c2 ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
        }
      }
    }
  }
}

TEST_CASE("selu keeps activations standardized through a deep stack") {
  // 10^4 standard-normal inputs through 5 dense-SELU layers initialized with
  // 1/fan_in normal weights: per-layer mean stays in [-0.2, 0.2] and variance
  // in [0.7, 1.3].
  std::mt19937_64 rng(20240915);
  const std::size_t n = 10000, width = 100;
  Tensor x = random_tensor({n, width}, rng);
  Tape tape(/*grad_enabled=*/false);
  for (int depth = 0; depth < 5; ++depth) {
    DenseLayer layer(width, width, Activation::selu);
    init_dense_params(layer, rng);
    x = layer.forward(tape, x);
    double sum = 0.0, sq = 0.0;
    for (double v : x.values()) {
      sum += v;
      sq += v * v;
    }
    const double count = static_cast<double>(x.size());
    const double mean_v = sum / count;
    const double var_v = sq / count - mean_v * mean_v;
    CHECK(mean_v > -0.2);
    CHECK(mean_v < 0.2);
    CHECK(var_v > 0.7);
    CHECK(var_v < 1.3);
  }
}
