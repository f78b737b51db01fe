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

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a value buffer. Operations record onto the
// thread's active Tape (installed with TapeScope) only when at least one
// input requires a gradient; with no active tape every op runs in no-grad
// mode. Tape::backward replays the recorded closures in reverse construction
// order, so every node is visited after all of its consumers.
//
// Broadcasting is restricted to two cases: one operand is a scalar, or one
// operand's shape equals the trailing dimensions of the other.

#ifndef CPIB_AUTOGRAD_HPP_
#define CPIB_AUTOGRAD_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpib::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // non-empty iff requires_grad
  bool requires_grad = false;
  bool leaf = true;
};
}  // namespace detail

// Gradient buffers of an op's inputs; an entry is empty when that input
// does not take part in differentiation.
using InputGrads = std::span<const std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> out_grad, InputGrads input_grads)>;

class Tensor;
class Tape;

// Builds an op output. Records onto the active tape iff any input requires
// a gradient. Used by every primitive and by fused ops outside this module.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return values().size(); }

  std::span<const double> values() const;
  // Only leaves may be written in place (parameter updates, fixtures).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Copy of the value with no gradient history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(std::string_view, Shape, std::vector<double>,
                            std::vector<Tensor>, BackwardFn);
  friend class Tape;
  std::shared_ptr<detail::Node> node_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Populates grad of every requires_grad leaf reachable from loss. Leaf
  // gradients accumulate; a tape can be replayed only once.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend Tensor make_result(std::string_view, Shape, std::vector<double>,
                            std::vector<Tensor>, BackwardFn);
  struct Entry {
    std::shared_ptr<detail::Node> out;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Installs a tape as the calling thread's active tape for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording for the scope lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

inline void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw TapeError("backward: no active tape");
  tape->backward(loss);
}

// ---- primitives ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// (m, k) x (k, n) -> (m, n)
Tensor matmul(const Tensor& a, const Tensor& b);

// Subgradient at 0 is 0; NaN propagates.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduces the last axis: (..., n) -> (...).
Tensor sum_last(const Tensor& a);
// (n, c), index per row -> (n)
Tensor gather_last(const Tensor& a, std::span<const int> index);
// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);
// out[..., k] = sum_{j >= k} a[..., j]
Tensor reverse_cumsum_last(const Tensor& a);

// ---- finite differences ----

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|). Throws NonFiniteError if f is non-finite at a perturbed point.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-6);

// Same metric for a scalar function of several leaves, which are perturbed in
// place and restored.
double gradcheck_params(const std::function<Tensor()>& f, std::span<Tensor> params, double h = 1e-6);

}  // namespace cpib::ag

#endif  // CPIB_AUTOGRAD_HPP_
