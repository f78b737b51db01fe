/*
 * Copyright 2026 The CP-IB Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cpib/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cpib::ag {

namespace {

thread_local Tape* g_active_tape = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

void check_finite(std::string_view op, const std::vector<double>& v) {
#if !defined(NDEBUG) || defined(CPIB_CHECK_FINITE)
  for (double x : v) {
    if (!std::isfinite(x)) throw NonFiniteError(std::string(op) + ": non-finite output");
  }
#else
  (void)op;
  (void)v;
#endif
}

// Output shape for an elementwise binary op under scalar / trailing-suffix
// broadcasting.
Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t na = numel(a);
  const std::size_t nb = numel(b);
  if (nb == 1 && b.size() <= a.size()) return a;
  if (na == 1 && a.size() <= b.size()) return b;
  auto is_suffix = [](const Shape& small, const Shape& big) {
    return small.size() < big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                   shape_string(b));
}

// Elementwise binary op. fwd(x, y) gives the value; dfdx/dfdy give partials.
template <class Fwd, class Dx, class Dy>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, Fwd fwd, Dx dfdx, Dy dfdy) {
  Shape shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = numel(shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  return make_result(op, std::move(shape), std::move(out), {a, b},
                     [a, b, n, na, nb, dfdx, dfdy](std::span<const double> g, InputGrads in) {
                       auto av = a.values();
                       auto bv = b.values();
                       if (!in[0].empty()) {
                         for (std::size_t i = 0; i < n; ++i)
                           in[0][i % na] += g[i] * dfdx(av[i % na], bv[i % nb]);
                       }
                       if (!in[1].empty()) {
                         for (std::size_t i = 0; i < n; ++i)
                           in[1][i % nb] += g[i] * dfdy(av[i % na], bv[i % nb]);
                       }
                     });
}

// Elementwise unary op; the partial may use the input x and output y.
template <class Fwd, class D>
Tensor unary(std::string_view op, const Tensor& a, Fwd fwd, D dfdx) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto shared_out = std::make_shared<std::vector<double>>(out);
  return make_result(op, a.shape(), std::move(out), {a},
                     [a, shared_out, dfdx](std::span<const double> g, InputGrads in) {
                       auto av = a.values();
                       const auto& y = *shared_out;
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * dfdx(av[i], y[i]);
                     });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = ag::numel(shape);
  return from(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (ag::numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("Tensor::dim: axis out of range");
  return node_->shape[axis];
}

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw TapeError("mutable_values: tensor is an op output");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return node_->value.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a rank-2 tensor");
  return node_->value.at(row * node_->shape[1] + col);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw TapeError("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->value.size(), 0.0);
  } else {
    node_->grad.clear();
  }
  return *this;
}

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad; }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(node_->shape, node_->value); }

// ---- Tape ----

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(op, value);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;

  Tape* tape = g_active_tape;
  const bool any_grad = std::any_of(inputs.begin(), inputs.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && any_grad) {
    if (tape->consumed_) throw TapeError(std::string(op) + ": recording onto a consumed tape");
    node->requires_grad = true;
    node->grad.assign(node->value.size(), 0.0);
    Tape::Entry entry;
    entry.out = node;
    entry.inputs.reserve(inputs.size());
    for (auto& t : inputs) entry.inputs.push_back(t.node());
    entry.fn = std::move(backward);
    tape->entries_.push_back(std::move(entry));
  }
  return Tensor(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward: tape already consumed");
  if (loss.numel() != 1) {
    throw TapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw TapeError("backward: loss does not depend on any parameter");
  const auto& target = loss.node();
  if (!target->leaf) {
    auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                           [&](const Entry& e) { return e.out == target; });
    if (it == entries_.rend()) throw TapeError("backward: loss was not recorded on this tape");
  }
  consumed_ = true;
  target->grad[0] += 1.0;

  std::vector<std::span<double>> input_grads;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    input_grads.clear();
    for (auto& in : it->inputs) {
      input_grads.push_back(in->requires_grad ? std::span<double>(in->grad) : std::span<double>());
    }
    it->fn(it->out->grad, input_grads);
  }
  entries_.clear();
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x < 0 ? 0.0 : x; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return make_result("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g, InputGrads in) {
                       ConstMap gm(g.data(), m, n);
                       if (!in[0].empty()) {
                         Map(in[0].data(), m, k).noalias() +=
                             gm * ConstMap(b.values().data(), k, n).transpose();
                       }
                       if (!in[1].empty()) {
                         Map(in[1].data(), k, n).noalias() +=
                             ConstMap(a.values().data(), m, k).transpose() * gm;
                       }
                     });
}

// ---- softmax family ----

Tensor softmax(const Tensor& a) {
  const std::size_t c = last_extent(a.shape());
  const std::size_t rows = a.numel() / c;
  auto av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * c;
    double* y = out.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  auto y_shared = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", a.shape(), std::move(out), {a},
                     [y_shared, rows, c](std::span<const double> g, InputGrads in) {
                       const auto& y = *y_shared;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0;
                         for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
                         for (std::size_t j = 0; j < c; ++j)
                           in[0][r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
                       }
                     });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t c = last_extent(a.shape());
  const std::size_t rows = a.numel() / c;
  auto av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * c;
    double* y = out.data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  auto y_shared = std::make_shared<std::vector<double>>(out);
  return make_result("log_softmax", a.shape(), std::move(out), {a},
                     [y_shared, rows, c](std::span<const double> g, InputGrads in) {
                       const auto& y = *y_shared;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gs = 0;
                         for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
                         for (std::size_t j = 0; j < c; ++j)
                           in[0][r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * gs;
                       }
                     });
}

// ---- reductions and indexing ----

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.values()) s += v;
  return make_result("sum", {}, {s}, {a}, [](std::span<const double> g, InputGrads in) {
    for (auto& x : in[0]) x += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("sum_last: scalar input");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  auto av = a.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r] += av[r * c + j];
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  return make_result("sum_last", std::move(shape), std::move(out), {a},
                     [rows, c](std::span<const double> g, InputGrads in) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < c; ++j) in[0][r * c + j] += g[r];
                     });
}

Tensor gather_last(const Tensor& a, std::span<const int> index) {
  if (a.rank() != 2) throw ShapeError("gather_last: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t rows = a.dim(0);
  const std::size_t c = a.dim(1);
  if (index.size() != rows) throw ShapeError("gather_last: index count does not match rows");
  std::vector<std::size_t> idx(rows);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= c)
      throw ShapeError("gather_last: index " + std::to_string(index[r]) + " out of range");
    idx[r] = static_cast<std::size_t>(index[r]);
    out[r] = a.values()[r * c + idx[r]];
  }
  return make_result("gather_last", {rows}, std::move(out), {a},
                     [idx = std::move(idx), c](std::span<const double> g, InputGrads in) {
                       for (std::size_t r = 0; r < idx.size(); ++r) in[0][r * c + idx[r]] += g[r];
                     });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0) throw ShapeError("slice_last: scalar input");
  const std::size_t c = a.shape().back();
  if (begin > end || end > c) throw ShapeError("slice_last: bad range");
  const std::size_t w = end - begin;
  const std::size_t rows = a.numel() / c;
  auto av = a.values();
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.data() + r * c + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  return make_result("slice_last", std::move(shape), std::move(out), {a},
                     [rows, c, w, begin](std::span<const double> g, InputGrads in) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < w; ++j) in[0][r * c + begin + j] += g[r * w + j];
                     });
}

Tensor reverse_cumsum_last(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("reverse_cumsum_last: scalar input");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  auto av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0;
    for (std::size_t j = c; j-- > 0;) out[r * c + j] = (acc += av[r * c + j]);
  }
  return make_result("reverse_cumsum_last", a.shape(), std::move(out), {a},
                     [rows, c](std::span<const double> g, InputGrads in) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         double acc = 0;
                         for (std::size_t j = 0; j < c; ++j) in[0][r * c + j] += (acc += g[r * c + j]);
                       }
                     });
}

// ---- finite differences ----

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const double v = f().item();
  if (!std::isfinite(v)) throw NonFiniteError("gradcheck: function is non-finite at a perturbed point");
  return v;
}

}  // namespace

double gradcheck_params(const std::function<Tensor()>& f, std::span<Tensor> params, double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw std::invalid_argument("gradcheck: step must be in (0, 1e-2]");
  for (auto& p : params) {
    if (!p.requires_grad()) throw std::invalid_argument("gradcheck: parameter without gradient");
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    tape.backward(y);
  }
  double worst = 0.0;
  for (auto& p : params) {
    auto v = p.mutable_values();
    auto g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = eval_scalar(f);
      v[i] = orig - h;
      const double down = eval_scalar(f);
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor params[] = {leaf};
  return gradcheck_params([&] { return f(leaf); }, params, h);
}

}  // namespace cpib::ag
