#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "harvestcast/errors.hpp"

namespace harvestcast {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);  // product; 1 for rank-0 (scalar)

// All tensor buffers are 64-byte aligned so vectorized kernels split into
// scalar/packet lanes the same way for every buffer. Transcendental packet
// math differs from libm in the last bits; a fixed lane split keeps results
// bit-reproducible across allocations, runs and thread counts.
template <typename T, std::size_t Alignment = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + Alignment - 1) / Alignment * Alignment;
    void* p = std::aligned_alloc(Alignment, bytes);
    if (p == nullptr) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <typename U>
  bool operator==(const AlignedAllocator<U, Alignment>&) const noexcept {
    return true;
  }
};

using DoubleBuffer = std::vector<double, AlignedAllocator<double>>;

// Dense 64-bit float tensor, row-major. Copies are shallow: they share the
// underlying buffer, so a Tensor behaves like a reference to a value that is
// immutable while a tape built on it is alive. Gradients live next to the
// data and accumulate additively.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, DoubleBuffer data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  // Direct write access. Intended for parameter updates between tapes and for
  // filling freshly created tensors; writing to a tensor recorded on a live
  // tape invalidates that tape.
  std::span<double> mutable_values();

  double item() const;  // single-element tensors only

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);

  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;  // copy of the gradient with this tensor's shape
  void accumulate_grad(std::span<const double> delta);
  void zero_grad();  // drops the gradient buffer

  // Deep copy (fresh buffer, no grad).
  Tensor clone() const;

  // Stable identity of the underlying buffer (shared by shallow copies).
  const void* id() const { return storage_.get(); }

  void ensure_finite(const std::string& context) const;

private:
  struct Storage {
    Shape shape;
    DoubleBuffer data;
    DoubleBuffer grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Storage> storage) : storage_(std::move(storage)) {}
  Storage& st();
  const Storage& st() const;

  std::shared_ptr<Storage> storage_;
};

// Records primitive operations in execution order. One backward pass visits
// every recorded operation exactly once, in reverse, which fixes the gradient
// accumulation order and makes backprop deterministic.
class Tape {
public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return ops_.size(); }

  // Scan gradients for NaN/Inf after each backward rule (off by default).
  void set_check_numerics(bool on) { check_numerics_ = on; }

  // Used by op implementations. `inputs` are the tensors the backward rule
  // writes gradients into; kept for numeric checks and diagnostics.
  void record(std::string name, std::vector<Tensor> inputs, std::function<void()> backward);

  friend void backprop(Tape& tape, const Tensor& loss);

private:
  struct Op {
    std::string name;
    std::vector<Tensor> inputs;
    std::function<void()> backward;
  };

  std::vector<Op> ops_;
  bool grad_enabled_ = true;
  bool check_numerics_ = false;
  bool consumed_ = false;
};

// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in reverse
// order. Gradients of all requires_grad tensors reachable from `loss`
// accumulate additively across fan-out. A tape can be backpropagated once.
void backprop(Tape& tape, const Tensor& loss);

// ---- primitive operations -------------------------------------------------

// [m x k] * [k x n] -> [m x n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// vectors [m] + [n] -> [m+n], or matrices [b x m] + [b x n] -> [b x (m+n)]
Tensor concat(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);       // same shape
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);       // same shape
Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b);  // same shape

// [b x n] + [n], bias broadcast across rows
Tensor add_bias(Tape& tape, const Tensor& m, const Tensor& bias);

// x*wx + h*wh + bias in one node: [b x k]x[k x n] + [b x m]x[m x n] + [n]
Tensor affine_pair(Tape& tape, const Tensor& x, const Tensor& wx, const Tensor& h,
                   const Tensor& wh, const Tensor& bias);

Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor abs(Tape& tape, const Tensor& x);   // subgradient at 0 is 0
Tensor mean(Tape& tape, const Tensor& x);  // all elements -> scalar
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// column range [col0, col1) of a [b x n] matrix
Tensor slice_cols(Tape& tape, const Tensor& m, std::size_t col0, std::size_t col1);

// [b x T x n] -> [b x n] at step t
Tensor time_slice(Tape& tape, const Tensor& seq, std::size_t t);

// T tensors [b x n] -> [b x T x n]
Tensor time_stack(Tape& tape, const std::vector<Tensor>& steps);

// ---- finite-difference oracle ---------------------------------------------

// f must build a scalar loss from `point` on the tape it is given. Returns
// max over coordinates of |analytic - central_difference| / max(1, |analytic|)
// with the central difference (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps).
// Deliberately re-evaluates f from scratch for every probe so it stays
// independent of the backward rules it is checking.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& point,
                  double eps);

}  // namespace harvestcast
