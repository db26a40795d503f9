#include "harvestcast/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace harvestcast {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

ConstMatMap mat_view(const Tensor& t) {
  return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.dim(1)));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
  }
}

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto s = std::make_shared<Storage>();
  s->data.assign(shape_numel(shape), value);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  DoubleBuffer buffer(data.begin(), data.end());
  return from_buffer(std::move(shape), std::move(buffer), requires_grad);
}

Tensor Tensor::from_buffer(Shape shape, DoubleBuffer data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_to_string(shape) + " wants " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor::Storage& Tensor::st() {
  if (!storage_) throw ContractError("use of undefined tensor");
  return *storage_;
}

const Tensor::Storage& Tensor::st() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return *storage_;
}

const Shape& Tensor::shape() const { return st().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return st().data.size(); }

std::span<const double> Tensor::values() const { return st().data; }

std::span<double> Tensor::mutable_values() { return st().data; }

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return st().data[0];
}

bool Tensor::requires_grad() const { return st().requires_grad; }

void Tensor::set_requires_grad(bool requires_grad) { st().requires_grad = requires_grad; }

bool Tensor::has_grad() const { return !st().grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return st().grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor::from_buffer(shape(), st().grad);
}

void Tensor::accumulate_grad(std::span<const double> delta) {
  Storage& s = st();
  if (delta.size() != s.data.size()) {
    throw DimensionError("gradient of size " + std::to_string(delta.size()) +
                         " for tensor of size " + std::to_string(s.data.size()));
  }
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  for (std::size_t i = 0; i < delta.size(); ++i) s.grad[i] += delta[i];
}

void Tensor::zero_grad() { st().grad.clear(); }

Tensor Tensor::clone() const { return Tensor::from_buffer(shape(), st().data, false); }

void Tensor::ensure_finite(const std::string& context) const {
  for (double v : st().data) {
    if (!std::isfinite(v)) {
      throw NumericError(context + ": non-finite value in tensor of shape " +
                         shape_to_string(shape()));
    }
  }
}

// ---- Tape -------------------------------------------------------------------

void Tape::record(std::string name, std::vector<Tensor> inputs, std::function<void()> backward) {
  if (!grad_enabled_) return;
  ops_.push_back(Op{std::move(name), std::move(inputs), std::move(backward)});
}

void backprop(Tape& tape, const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backprop: loss must be scalar, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (!tape.grad_enabled_) {
    throw ContractError("backprop: tape was created with gradients disabled");
  }
  if (tape.consumed_) {
    throw ContractError("backprop: tape already backpropagated");
  }
  tape.consumed_ = true;

  const double one = 1.0;
  const_cast<Tensor&>(loss).accumulate_grad(std::span<const double>(&one, 1));

  for (auto it = tape.ops_.rbegin(); it != tape.ops_.rend(); ++it) {
    it->backward();
    if (tape.check_numerics_) {
      for (const Tensor& in : it->inputs) {
        if (!in.has_grad()) continue;
        for (double g : in.grad()) {
          if (!std::isfinite(g)) {
            throw NumericError("backprop: non-finite gradient from op '" + it->name + "'");
          }
        }
      }
    }
  }
}

// ---- op helpers ---------------------------------------------------------------

namespace {

// Output tensors inherit requires_grad so downstream ops keep recording.
Tensor make_output(Shape shape, DoubleBuffer data, bool requires_grad) {
  return Tensor::from_buffer(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

// ---- matmul -------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw DimensionError("matmul: need matrices, got " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  DoubleBuffer out(m * n);
  {
    MatMap c(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    c.noalias() = mat_view(a) * mat_view(b);
  }
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor c = make_output({m, n}, std::move(out), rg);
  if (rg) {
    tape.record("matmul", {a, b}, [a, b, c, m, k, n]() {
      if (!c.has_grad()) return;
      ConstMatMap dc(c.grad().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      if (a.requires_grad()) {
        std::vector<double> da(m * k);
        MatMap(da.data(), m, k).noalias() = dc * mat_view(b).transpose();
        const_cast<Tensor&>(a).accumulate_grad(da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(k * n);
        MatMap(db.data(), k, n).noalias() = mat_view(a).transpose() * dc;
        const_cast<Tensor&>(b).accumulate_grad(db);
      }
    });
  }
  return c;
}

// ---- concat -------------------------------------------------------------------

Tensor concat(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim() || a.ndim() < 1 || a.ndim() > 2) {
    throw DimensionError("concat: need two vectors or two matrices, got " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  Shape out_shape;
  std::size_t batch = 1, am, bm;
  if (a.ndim() == 1) {
    am = a.dim(0);
    bm = b.dim(0);
    out_shape = {am + bm};
  } else {
    if (a.dim(0) != b.dim(0)) {
      throw DimensionError("concat: batch dimensions disagree for " + shape_to_string(a.shape()) +
                           " and " + shape_to_string(b.shape()));
    }
    batch = a.dim(0);
    am = a.dim(1);
    bm = b.dim(1);
    out_shape = {batch, am + bm};
  }
  DoubleBuffer out(batch * (am + bm));
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t r = 0; r < batch; ++r) {
    std::copy(ap + r * am, ap + (r + 1) * am, out.data() + r * (am + bm));
    std::copy(bp + r * bm, bp + (r + 1) * bm, out.data() + r * (am + bm) + am);
  }
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor c = make_output(std::move(out_shape), std::move(out), rg);
  if (rg) {
    tape.record("concat", {a, b}, [a, b, c, batch, am, bm]() {
      if (!c.has_grad()) return;
      const double* dc = c.grad().data();
      if (a.requires_grad()) {
        std::vector<double> da(batch * am);
        for (std::size_t r = 0; r < batch; ++r)
          std::copy(dc + r * (am + bm), dc + r * (am + bm) + am, da.data() + r * am);
        const_cast<Tensor&>(a).accumulate_grad(da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(batch * bm);
        for (std::size_t r = 0; r < batch; ++r)
          std::copy(dc + r * (am + bm) + am, dc + (r + 1) * (am + bm), db.data() + r * bm);
        const_cast<Tensor&>(b).accumulate_grad(db);
      }
    });
  }
  return c;
}

// ---- elementwise binary ---------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor pointwise_binary(Tape& tape, const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                        Bwd bwd) {
  require_same_shape(name, a, b);
  DoubleBuffer out(a.size());
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ap[i], bp[i]);
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record(name, {a, b}, [a, b, c, bwd]() {
      if (!c.has_grad()) return;
      const double* dc = c.grad().data();
      const std::size_t n = c.size();
      if (a.requires_grad()) {
        std::vector<double> da(n);
        for (std::size_t i = 0; i < n; ++i)
          da[i] = bwd(a.values()[i], b.values()[i], dc[i], /*wrt_a=*/true);
        const_cast<Tensor&>(a).accumulate_grad(da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(n);
        for (std::size_t i = 0; i < n; ++i)
          db[i] = bwd(a.values()[i], b.values()[i], dc[i], /*wrt_a=*/false);
        const_cast<Tensor&>(b).accumulate_grad(db);
      }
    });
  }
  return c;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double d, bool) { return d; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double d, bool wrt_a) { return wrt_a ? d : -d; });
}

Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
  return pointwise_binary(
      tape, "hadamard", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double d, bool wrt_a) { return wrt_a ? d * y : d * x; });
}

// ---- bias broadcast -------------------------------------------------------------

Tensor add_bias(Tape& tape, const Tensor& m, const Tensor& bias) {
  if (m.ndim() != 2 || bias.ndim() != 1 || m.dim(1) != bias.dim(0)) {
    throw DimensionError("add_bias: " + shape_to_string(m.shape()) + " + " +
                         shape_to_string(bias.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  DoubleBuffer out(rows * cols);
  const double* mp = m.values().data();
  const double* bp = bias.values().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = mp[r * cols + c] + bp[c];
  const bool rg = wants_grad(tape, {&m, &bias});
  Tensor c = make_output({rows, cols}, std::move(out), rg);
  if (rg) {
    tape.record("add_bias", {m, bias}, [m, bias, c, rows, cols]() {
      if (!c.has_grad()) return;
      const double* dc = c.grad().data();
      if (m.requires_grad()) const_cast<Tensor&>(m).accumulate_grad(c.grad());
      if (bias.requires_grad()) {
        std::vector<double> db(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols; ++j) db[j] += dc[r * cols + j];
        const_cast<Tensor&>(bias).accumulate_grad(db);
      }
    });
  }
  return c;
}

// ---- fused x*wx + h*wh + bias ----------------------------------------------------

Tensor affine_pair(Tape& tape, const Tensor& x, const Tensor& wx, const Tensor& h,
                   const Tensor& wh, const Tensor& bias) {
  if (x.ndim() != 2 || wx.ndim() != 2 || h.ndim() != 2 || wh.ndim() != 2 || bias.ndim() != 1) {
    throw DimensionError("affine_pair: unexpected ranks");
  }
  if (x.dim(1) != wx.dim(0) || h.dim(1) != wh.dim(0) || wx.dim(1) != wh.dim(1) ||
      wx.dim(1) != bias.dim(0) || x.dim(0) != h.dim(0)) {
    throw DimensionError("affine_pair: " + shape_to_string(x.shape()) + "*" +
                         shape_to_string(wx.shape()) + " + " + shape_to_string(h.shape()) + "*" +
                         shape_to_string(wh.shape()) + " + " + shape_to_string(bias.shape()));
  }
  const std::size_t b = x.dim(0), n = wx.dim(1);
  DoubleBuffer out(b * n);
  {
    MatMap c(out.data(), b, n);
    c.noalias() = mat_view(x) * mat_view(wx);
    c.noalias() += mat_view(h) * mat_view(wh);
    ConstArrMap bv(bias.values().data(), n);
    for (std::size_t r = 0; r < b; ++r) ArrMap(out.data() + r * n, n) += bv;
  }
  const bool rg = wants_grad(tape, {&x, &wx, &h, &wh, &bias});
  Tensor c = make_output({b, n}, std::move(out), rg);
  if (rg) {
    tape.record("affine_pair", {x, wx, h, wh, bias}, [x, wx, h, wh, bias, c, b, n]() {
      if (!c.has_grad()) return;
      ConstMatMap dc(c.grad().data(), b, n);
      if (x.requires_grad()) {
        std::vector<double> dx(x.size());
        MatMap(dx.data(), b, x.dim(1)).noalias() = dc * mat_view(wx).transpose();
        const_cast<Tensor&>(x).accumulate_grad(dx);
      }
      if (wx.requires_grad()) {
        std::vector<double> dwx(wx.size());
        MatMap(dwx.data(), wx.dim(0), n).noalias() = mat_view(x).transpose() * dc;
        const_cast<Tensor&>(wx).accumulate_grad(dwx);
      }
      if (h.requires_grad()) {
        std::vector<double> dh(h.size());
        MatMap(dh.data(), b, h.dim(1)).noalias() = dc * mat_view(wh).transpose();
        const_cast<Tensor&>(h).accumulate_grad(dh);
      }
      if (wh.requires_grad()) {
        std::vector<double> dwh(wh.size());
        MatMap(dwh.data(), wh.dim(0), n).noalias() = mat_view(h).transpose() * dc;
        const_cast<Tensor&>(wh).accumulate_grad(dwh);
      }
      if (bias.requires_grad()) {
        std::vector<double> db(n, 0.0);
        const double* dcp = c.grad().data();
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t j = 0; j < n; ++j) db[j] += dcp[r * n + j];
        const_cast<Tensor&>(bias).accumulate_grad(db);
      }
    });
  }
  return c;
}

// ---- elementwise unary ------------------------------------------------------------

namespace {

template <typename Fwd, typename BwdFromOut>
Tensor pointwise_unary(Tape& tape, const char* name, const Tensor& x, Fwd fwd, BwdFromOut bwd) {
  DoubleBuffer out(x.size());
  fwd(x.values(), out);
  const bool rg = wants_grad(tape, {&x});
  Tensor y = make_output(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record(name, {x}, [x, y, bwd]() {
      if (!y.has_grad()) return;
      std::vector<double> dx(x.size());
      bwd(x.values(), y.values(), y.grad(), dx);
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return y;
}

// exp is vectorized for doubles, tanh is not; route both through exp.
void sigmoid_kernel(std::span<const double> in, std::span<double> out) {
  ConstArrMap x(in.data(), static_cast<Eigen::Index>(in.size()));
  ArrMap y(out.data(), static_cast<Eigen::Index>(out.size()));
  y = ((-x).exp() + 1.0).inverse();
}

void tanh_kernel(std::span<const double> in, std::span<double> out) {
  ConstArrMap x(in.data(), static_cast<Eigen::Index>(in.size()));
  ArrMap y(out.data(), static_cast<Eigen::Index>(out.size()));
  y = 1.0 - 2.0 * ((2.0 * x).exp() + 1.0).inverse();
}

}  // namespace

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return pointwise_unary(
      tape, "sigmoid", x, sigmoid_kernel,
      [](std::span<const double>, std::span<const double> y, std::span<const double> dy,
         std::span<double> dx) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
      });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return pointwise_unary(
      tape, "tanh", x, tanh_kernel,
      [](std::span<const double>, std::span<const double> y, std::span<const double> dy,
         std::span<double> dx) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
      });
}

Tensor abs(Tape& tape, const Tensor& x) {
  return pointwise_unary(
      tape, "abs", x,
      [](std::span<const double> in, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(in[i]);
      },
      [](std::span<const double> in, std::span<const double>, std::span<const double> dy,
         std::span<double> dx) {
        for (std::size_t i = 0; i < dx.size(); ++i) {
          dx[i] = in[i] > 0.0 ? dy[i] : (in[i] < 0.0 ? -dy[i] : 0.0);
        }
      });
}

Tensor mean(Tape& tape, const Tensor& x) {
  if (x.size() == 0) throw ContractError("mean of empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  const bool rg = wants_grad(tape, {&x});
  Tensor y = make_output({}, DoubleBuffer{acc * inv}, rg);
  if (rg) {
    tape.record("mean", {x}, [x, y, inv]() {
      if (!y.has_grad()) return;
      const double d = y.grad()[0] * inv;
      std::vector<double> dx(x.size(), d);
      const_cast<Tensor&>(x).accumulate_grad(dx);
    });
  }
  return y;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " -> " +
                         shape_to_string(shape) + " changes element count");
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor y = make_output(std::move(shape), DoubleBuffer(x.values().begin(), x.values().end()), rg);
  if (rg) {
    tape.record("reshape", {x}, [x, y]() {
      if (!y.has_grad()) return;
      const_cast<Tensor&>(x).accumulate_grad(y.grad());
    });
  }
  return y;
}

Tensor slice_cols(Tape& tape, const Tensor& m, std::size_t col0, std::size_t col1) {
  if (m.ndim() != 2 || col0 >= col1 || col1 > m.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(col0) + ", " + std::to_string(col1) +
                         ") of " + shape_to_string(m.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1), w = col1 - col0;
  DoubleBuffer out(rows * w);
  const double* mp = m.values().data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(mp + r * cols + col0, mp + r * cols + col1, out.data() + r * w);
  const bool rg = wants_grad(tape, {&m});
  Tensor y = make_output({rows, w}, std::move(out), rg);
  if (rg) {
    tape.record("slice_cols", {m}, [m, y, rows, cols, col0, w]() {
      if (!y.has_grad()) return;
      std::vector<double> dm(m.size(), 0.0);
      const double* dy = y.grad().data();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(dy + r * w, dy + (r + 1) * w, dm.data() + r * cols + col0);
      const_cast<Tensor&>(m).accumulate_grad(dm);
    });
  }
  return y;
}

Tensor time_slice(Tape& tape, const Tensor& seq, std::size_t t) {
  if (seq.ndim() != 3 || t >= seq.dim(1)) {
    throw DimensionError("time_slice: step " + std::to_string(t) + " of " +
                         shape_to_string(seq.shape()));
  }
  const std::size_t b = seq.dim(0), steps = seq.dim(1), n = seq.dim(2);
  DoubleBuffer out(b * n);
  const double* sp = seq.values().data();
  for (std::size_t r = 0; r < b; ++r)
    std::copy(sp + (r * steps + t) * n, sp + (r * steps + t + 1) * n, out.data() + r * n);
  const bool rg = wants_grad(tape, {&seq});
  Tensor y = make_output({b, n}, std::move(out), rg);
  if (rg) {
    tape.record("time_slice", {seq}, [seq, y, b, steps, n, t]() {
      if (!y.has_grad()) return;
      std::vector<double> ds(seq.size(), 0.0);
      const double* dy = y.grad().data();
      for (std::size_t r = 0; r < b; ++r)
        std::copy(dy + r * n, dy + (r + 1) * n, ds.data() + (r * steps + t) * n);
      const_cast<Tensor&>(seq).accumulate_grad(ds);
    });
  }
  return y;
}

Tensor time_stack(Tape& tape, const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ContractError("time_stack of zero steps");
  const std::size_t b = steps[0].dim(0), n = steps[0].dim(1), T = steps.size();
  for (const Tensor& s : steps) {
    if (s.ndim() != 2 || s.dim(0) != b || s.dim(1) != n) {
      throw DimensionError("time_stack: step shape " + shape_to_string(s.shape()) +
                           " does not match " + shape_to_string(steps[0].shape()));
    }
  }
  DoubleBuffer out(b * T * n);
  for (std::size_t t = 0; t < T; ++t) {
    const double* sp = steps[t].values().data();
    for (std::size_t r = 0; r < b; ++r)
      std::copy(sp + r * n, sp + (r + 1) * n, out.data() + (r * T + t) * n);
  }
  bool rg = false;
  if (tape.grad_enabled()) {
    for (const Tensor& s : steps) rg = rg || s.requires_grad();
  }
  Tensor y = make_output({b, T, n}, std::move(out), rg);
  if (rg) {
    tape.record("time_stack", steps, [steps, y, b, n, T]() {
      if (!y.has_grad()) return;
      const double* dy = y.grad().data();
      for (std::size_t t = 0; t < T; ++t) {
        if (!steps[t].requires_grad()) continue;
        std::vector<double> ds(b * n);
        for (std::size_t r = 0; r < b; ++r)
          std::copy(dy + (r * T + t) * n, dy + (r * T + t + 1) * n, ds.data() + r * n);
        const_cast<Tensor&>(steps[t]).accumulate_grad(ds);
      }
    });
  }
  return y;
}

// ---- grad_check --------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& point,
                  double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");

  Tensor x = point.clone();
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    tape.set_check_numerics(true);
    Tensor loss = f(tape, x);
    if (loss.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
    backprop(tape, loss);
    Tensor g = x.grad_tensor();
    analytic.assign(g.values().begin(), g.values().end());
  }

  auto eval = [&](const Tensor& probe) {
    Tape tape(/*grad_enabled=*/false);
    double v = f(tape, probe).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite probe value");
    return v;
  };

  double worst = 0.0;
  Tensor probe = point.clone();
  std::span<double> pv = probe.mutable_values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double saved = pv[i];
    pv[i] = saved + eps;
    const double up = eval(probe);
    pv[i] = saved - eps;
    const double down = eval(probe);
    pv[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace harvestcast
