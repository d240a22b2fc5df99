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

#include "vitreg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace vitreg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <typename T>
static Tensor<T> record_impl(Shape shape, std::vector<T> value, std::string_view op,
                             const Tensor<T>* begin, const Tensor<T>* end,
                             std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = next_seq();
  node->op = op;
  bool any = false;
  for (auto* it = begin; it != end; ++it) any = any || it->requires_grad();
  if (any) {
    node->requires_grad = true;
    for (auto* it = begin; it != end; ++it) node->inputs.push_back(it->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, std::string_view op,
                 std::initializer_list<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  return record_impl<T>(std::move(shape), std::move(value), op, inputs.begin(), inputs.end(),
                        std::move(backward));
}

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, std::string_view op,
                 const std::vector<Tensor<T>>& inputs, std::function<void(Node<T>&)> backward) {
  return record_impl<T>(std::move(shape), std::move(value), op, inputs.data(),
                        inputs.data() + inputs.size(), std::move(backward));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  const double* a, const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const float* a, const float* b, float* c, bool accumulate) {
  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, M, N);
  Eigen::Map<const Mat> am(a, trans_a ? K : M, trans_a ? M : K);
  Eigen::Map<const Mat> bm(b, trans_b ? N : K, trans_b ? K : N);
  if (!accumulate) cm.setZero();
  if (trans_a && trans_b) {
    cm.noalias() += am.transpose() * bm.transpose();
  } else if (trans_a) {
    cm.noalias() += am.transpose() * bm;
  } else if (trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am * bm;
  }
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index,
                 std::string_view op) {
  const auto& idx = *index;
  if (idx.size() != numel(out_shape)) throw ShapeError(std::string(op) + ": index size mismatch");
  std::vector<T> out(idx.size());
  const auto xd = x.data();
  for (std::size_t j = 0; j < idx.size(); ++j) out[j] = xd[idx[j]];
  return record<T>(std::move(out_shape), std::move(out), op, {x}, [index](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    T* gx = in.grad_data();
    const auto& ix = *index;
    for (std::size_t j = 0; j < ix.size(); ++j) gx[ix[j]] += self.grad[j];
  });
}

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape));
  if (vitreg::numel(shape) != values.size())
    throw ShapeError("tensor shape " + to_string(shape) + " does not match buffer of " +
                     std::to_string(values.size()));
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->seq = detail::next_seq();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = vitreg::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  node_->grad_data();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return Tensor(shape(), node_->value, requires_grad);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  using detail::Node;
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any tensor requiring grad");

  // Tape: every node reachable through requires_grad edges, in creation order.
  // The tape owns its nodes: clearing inputs below would otherwise free
  // nodes that are still waiting for their turn.
  std::vector<std::shared_ptr<Node<T>>> tape;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> stack{loss.node_ptr()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    tape.push_back(std::move(n));
  }
  std::sort(tape.begin(), tape.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  loss.node()->grad_data()[0] += T(1);
  for (auto& n : tape) {
    if (n->is_leaf()) continue;
    if (n->backward && !n->grad.empty()) n->backward(*n);
    // Intermediate state is released once consumed.
    n->backward = nullptr;
    n->inputs.clear();
    if (n.get() != loss.node()) std::vector<T>().swap(n->grad);
  }
}

// ---------------------------------------------------------------- elementwise

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_slope(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return detail::record<T>(a.shape(), std::move(out), "add", {a, b}, [](detail::Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      T* g = in.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return detail::record<T>(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      T* g = self.inputs[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      T* g = self.inputs[1]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return detail::record<T>(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      T* g = x.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      T* g = y.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  return detail::record<T>(a.shape(), std::move(out), "scale", {a}, [s](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > T(0) ? ad[i] : T(0);
  return detail::record<T>(a.shape(), std::move(out), "relu", {a}, [](detail::Node<T>& self) {
    auto& x = *self.inputs[0];
    T* g = x.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (x.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(ad[i]);
  return detail::record<T>(a.shape(), std::move(out), "gelu", {a}, [](detail::Node<T>& self) {
    auto& x = *self.inputs[0];
    T* g = x.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * gelu_slope(x.value[i]);
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * ad[i];
  return detail::record<T>(a.shape(), std::move(out), "square", {a}, [](detail::Node<T>& self) {
    auto& x = *self.inputs[0];
    T* g = x.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * T(2) * x.value[i];
  });
}

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>* b, T scalar) {
  auto need_b = [&]() -> const Tensor<T>& {
    if (b == nullptr) throw std::invalid_argument("elementwise: binary op needs a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::sub: return sub(a, need_b());
    case ElementwiseOp::mul: return mul(a, need_b());
    case ElementwiseOp::scale: return scale(a, scalar);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::gelu: return gelu(a);
    case ElementwiseOp::square: return square(a);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

// --------------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t M = a.shape()[a.rank() - 2];
  const std::size_t K = a.shape()[a.rank() - 1];
  const std::size_t Kb = b.shape()[b.rank() - 2];
  const std::size_t N = b.shape()[b.rank() - 1];
  if (K != Kb)
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
      throw ShapeError("matmul: batch axes differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.shape()[i];

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  std::vector<T> out(batch * M * N);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (shared_b) {
    detail::gemm<T>(false, false, batch * M, N, K, ad, bd, out.data(), false);
  } else {
    for (std::size_t s = 0; s < batch; ++s)
      detail::gemm<T>(false, false, M, N, K, ad + s * M * K, bd + s * K * N, out.data() + s * M * N, false);
  }
  return detail::record<T>(std::move(out_shape), std::move(out), "matmul", {a, b},
                           [=](detail::Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    const T* g = self.grad.data();
    if (shared_b) {
      if (x.requires_grad) detail::gemm<T>(false, true, batch * M, K, N, g, y.value.data(), x.grad_data(), true);
      if (y.requires_grad) detail::gemm<T>(true, false, K, N, batch * M, x.value.data(), g, y.grad_data(), true);
      return;
    }
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gs = g + s * M * N;
      if (x.requires_grad)
        detail::gemm<T>(false, true, M, K, N, gs, y.value.data() + s * K * N, x.grad_data() + s * M * K, true);
      if (y.requires_grad)
        detail::gemm<T>(true, false, K, N, M, x.value.data() + s * M * K, gs, y.grad_data() + s * K * N, true);
    }
  });
}

// --------------------------------------------------------------------- reduce

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::vector<std::size_t> axes, bool keepdims) {
  const std::size_t rank = x.rank();
  if (axes.empty()) {
    axes.resize(rank);
    std::iota(axes.begin(), axes.end(), 0);
  }
  std::vector<bool> reduced(rank, false);
  for (auto ax : axes) {
    if (ax >= rank) throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for " + to_string(x.shape()));
    if (reduced[ax]) throw ShapeError("reduce: axis " + std::to_string(ax) + " listed twice");
    reduced[ax] = true;
  }
  Shape kept_shape = x.shape();
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i)
    if (reduced[i]) {
      count *= kept_shape[i];
      kept_shape[i] = 1;
    }
  Shape out_shape;
  for (std::size_t i = 0; i < rank; ++i)
    if (keepdims || !reduced[i]) out_shape.push_back(kept_shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  // Output slot of every input element.
  const auto out_strides = detail::strides_of(kept_shape);
  auto target = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      std::size_t o = 0;
      for (std::size_t a = 0; a < rank; ++a)
        if (!reduced[a]) o += idx[a] * out_strides[a];
      (*target)[i] = o;
      for (std::size_t a = rank; a-- > 0;) {
        if (++idx[a] < x.shape()[a]) break;
        idx[a] = 0;
      }
    }
  }

  const std::size_t n_out = numel(kept_shape);
  const auto xd = x.data();
  std::vector<T> out(n_out, T(0));
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (op == ReduceOp::max) {
    argmax->assign(n_out, SIZE_MAX);
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const std::size_t o = (*target)[i];
      // Strictly greater keeps the lowest linear index on ties.
      if ((*argmax)[o] == SIZE_MAX || xd[i] > out[o]) {
        out[o] = xd[i];
        (*argmax)[o] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < xd.size(); ++i) out[(*target)[i]] += xd[i];
    if (op == ReduceOp::mean)
      for (auto& v : out) v /= static_cast<T>(count);
  }

  return detail::record<T>(std::move(out_shape), std::move(out), "reduce", {x},
                           [op, target, argmax, count](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    const auto& tg = *target;
    switch (op) {
      case ReduceOp::sum:
        for (std::size_t i = 0; i < tg.size(); ++i) g[i] += self.grad[tg[i]];
        break;
      case ReduceOp::mean: {
        const T inv = T(1) / static_cast<T>(count);
        for (std::size_t i = 0; i < tg.size(); ++i) g[i] += self.grad[tg[i]] * inv;
        break;
      }
      case ReduceOp::max:
        for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
        break;
    }
  });
}

// ------------------------------------------------------------- shape algebra

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::record<T>(std::move(shape), std::move(out), "reshape", {x}, [](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw ShapeError("permute: permutation length differs from rank");
  std::vector<bool> used(rank, false);
  for (auto p : perm) {
    if (p >= rank || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
  const auto in_strides = detail::strides_of(x.shape());
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t j = 0; j < index->size(); ++j) {
    std::size_t src = 0;
    for (std::size_t a = 0; a < rank; ++a) src += idx[a] * in_strides[perm[a]];
    (*index)[j] = src;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < out_shape[a]) break;
      idx[a] = 0;
    }
  }
  return detail::gather<T>(x, std::move(out_shape), std::move(index), "permute");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t a = 0; a < first.size(); ++a)
      if (a != axis && p.shape()[a] != first[a])
        throw ShapeError("concat: " + to_string(p.shape()) + " vs " + to_string(first) + " off axis " +
                         std::to_string(axis));
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  std::vector<std::size_t> chunk;
  for (const auto& p : parts) chunk.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  std::vector<T> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * chunk[k], src + (o + 1) * chunk[k], out.data() + o * row + offset);
    offset += chunk[k];
  }
  return detail::record<T>(std::move(out_shape), std::move(out), "concat", parts,
                           [chunk, outer, row](detail::Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      if (in.requires_grad) {
        T* g = in.grad_data();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk[k]; ++i) g[o * chunk[k] + i] += self.grad[o * row + off + i];
      }
      off += chunk[k];
    }
  });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& target) {
  if (target.size() < x.rank() || !std::equal(x.shape().begin(), x.shape().end(), target.end() - x.rank()))
    throw ShapeError("expand: " + to_string(x.shape()) + " is not a suffix of " + to_string(target));
  const std::size_t n = x.numel();
  const std::size_t reps = numel(target) / n;
  std::vector<T> out(reps * n);
  for (std::size_t r = 0; r < reps; ++r) std::copy(x.data().begin(), x.data().end(), out.begin() + r * n);
  return detail::record<T>(target, std::move(out), "expand", {x}, [n, reps](detail::Node<T>& self) {
    T* g = self.inputs[0]->grad_data();
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[r * n + i];
  });
}

// ------------------------------------------------------------------ gradcheck

double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check_params(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                                  const GradCheckOptions& options) {
  if (!(options.eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) throw std::invalid_argument("grad_check: parameters must be grad leaves");
    p.zero_grad();
  }
  Tensor<double> y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: function output must be scalar, got " + to_string(y.shape()));
  backward(y);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
  }

  for (auto& p : params) p.node()->requires_grad = false;
  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    const bool sampled = options.max_coords != 0 && coords.size() > options.max_coords;
    const std::size_t want = sampled ? options.max_coords : coords.size();
    std::mt19937_64 rng(options.seed * 1000003ULL + t);
    auto central = [&](std::size_t i, double h) {
      const double orig = values[i];
      values[i] = orig + h;
      const double fp = f().item();
      values[i] = orig - h;
      const double fm = f().item();
      values[i] = orig;
      return (fp - fm) / (2.0 * h);
    };
    std::size_t accepted = 0;
    for (std::size_t k = 0; k < coords.size() && accepted < want; ++k) {
      if (sampled) {
        std::uniform_int_distribution<std::size_t> pick(k, coords.size() - 1);
        std::swap(coords[k], coords[pick(rng)]);
      }
      const std::size_t i = coords[k];
      const double numeric = central(i, options.eps);
      if (options.smoothness_tolerance > 0.0 &&
          grad_rel_error(numeric, central(i, 0.5 * options.eps)) > options.smoothness_tolerance) {
        ++result.skipped;
        continue;
      }
      ++accepted;
      const double err = grad_rel_error(analytic[t][i], numeric);
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = analytic[t][i];
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& p : params) p.node()->requires_grad = true;
  return result;
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                           const GradCheckOptions& options) {
  Tensor<double> leaf = x.detach(true);
  return grad_check_params([&] { return f(leaf); }, {leaf}, options);
}

// ------------------------------------------------------------- instantiation

#define VITREG_INSTANTIATE(T)                                                                                   \
  template class Tensor<T>;                                                                                     \
  template Tensor<T> detail::record<T>(Shape, std::vector<T>, std::string_view, std::initializer_list<Tensor<T>>, \
                                       std::function<void(detail::Node<T>&)>);                                  \
  template Tensor<T> detail::record<T>(Shape, std::vector<T>, std::string_view, const std::vector<Tensor<T>>&,   \
                                       std::function<void(detail::Node<T>&)>);                                  \
  template Tensor<T> detail::gather<T>(const Tensor<T>&, Shape, std::shared_ptr<const std::vector<std::size_t>>,   \
                                       std::string_view);                                                       \
  template void backward<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> elementwise<T>(ElementwiseOp, const Tensor<T>&, const Tensor<T>*, T);                      \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                             \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> square<T>(const Tensor<T>&);                                                               \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> reduce<T>(ReduceOp, const Tensor<T>&, std::vector<std::size_t>, bool);                    \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                             \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                                    \
  template Tensor<T> expand<T>(const Tensor<T>&, const Shape&);

VITREG_INSTANTIATE(float)
VITREG_INSTANTIATE(double)

}  // namespace vitreg
