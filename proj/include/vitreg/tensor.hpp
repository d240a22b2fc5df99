/* Copyright 2026 The vitreg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// Dense tensors with a reverse-mode differentiation tape.
//
// Every operation that consumes a tensor with requires_grad() records a node
// holding its inputs and a backward closure. Nodes carry a creation sequence
// number, so sorting the nodes reachable from a loss by descending sequence
// gives a valid reverse topological order. backward() walks that order once
// and then drops the recorded closures, which frees the intermediate graph.
//
// Parameters are leaf tensors that live outside any tape; their gradients
// accumulate across backward() calls until zero_grad().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vitreg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Zero-initialized on first use.
  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
  bool is_leaf() const { return inputs.empty() && !backward; }
};

std::uint64_t next_seq();

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  T item() const;

  // Leaf-only mutation, used by optimizers, loaders and finite differences.
  std::span<T> mutable_data();
  std::span<T> mutable_grad();
  void zero_grad();

  // Copy of the value with no tape history.
  Tensor detach(bool requires_grad = false) const;

  template <typename U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->value[i]);
    return Tensor<U>(shape(), std::move(out), requires_grad);
  }

  detail::Node<T>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

// Creates the result tensor of an operation. A tape node (inputs plus
// backward closure) is attached only when some input requires a gradient.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, std::string_view op,
                 std::initializer_list<Tensor<T>> inputs,
                 std::function<void(Node<T>&)> backward);

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, std::string_view op,
                 const std::vector<Tensor<T>>& inputs,
                 std::function<void(Node<T>&)> backward);

// Row-major C[MxN] (+)= op(A)[MxK] * op(B)[KxN]. Double precision uses a plain
// k-ascending loop so results match scalar oracles bit for bit; single
// precision is backed by Eigen.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

// out[j] = x[index[j]]; backward scatters.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index,
                 std::string_view op);

std::vector<std::size_t> strides_of(const Shape& shape);

}  // namespace detail

// Runs the tape backwards from a scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

enum class ElementwiseOp { add, sub, mul, scale, relu, gelu, square };

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>* b = nullptr, T scalar = T(1));

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return scale(a, s); }

// a[..., M, K] x b[K, N] or b[..., K, N] with the same leading axes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

enum class ReduceOp { sum, mean, max };

// Empty axes reduces over everything.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::vector<std::size_t> axes = {}, bool keepdims = false);

template <typename T> Tensor<T> sum(const Tensor<T>& x) { return reduce(ReduceOp::sum, x); }
template <typename T> Tensor<T> mean(const Tensor<T>& x) { return reduce(ReduceOp::mean, x); }

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Explicit broadcast: x's shape must equal the trailing axes of target; the
// leading axes repeat it. Backward sums over the repeats.
template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& target);

// Gradient verification by central differences.
struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates checked per tensor; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // When positive, a coordinate whose central differences at eps and eps/2
  // disagree by more than this relative amount straddles a kink (or is lost
  // in roundoff); it is skipped and another coordinate of the same tensor is
  // drawn instead. The test never looks at the analytic gradient.
  double smoothness_tolerance = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

double grad_rel_error(double analytic, double numeric);

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& options = {});

// Checks the gradient of a nullary loss with respect to leaf tensors it reads.
// The leaves are perturbed in place and restored.
GradCheckResult grad_check_params(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params,
                                  const GradCheckOptions& options = {});

}  // namespace vitreg
