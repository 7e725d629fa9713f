#pragma once

// Dense 2-D tensors with reverse-mode gradient accumulation.
//
// A BasicTensor is a shared handle to a graph node holding an Eigen row-major
// matrix. Operations on tensors that require gradients record their inputs and
// a local backward rule; backward() walks the recorded graph from a scalar
// root in reverse topological order and then releases it.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rja/core/error.hpp"

namespace rja {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline thread_local int no_grad_depth = 0;

template <typename Scalar>
struct Node {
  using Matrix = RowMatrix<Scalar>;

  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0 && value.size() != 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode_enabled() { return detail::no_grad_depth == 0; }

template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;
  using Matrix = RowMatrix<Scalar>;
  using Node = detail::Node<Scalar>;

  BasicTensor() : BasicTensor(Matrix(0, 0)) {}

  explicit BasicTensor(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (!value.allFinite()) throw NumericError("tensor constructed from non-finite values");
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  }

  static BasicTensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false) {
    return BasicTensor(Matrix::Zero(rows, cols), requires_grad);
  }

  static BasicTensor constant(Eigen::Index rows, Eigen::Index cols, Scalar v) {
    return BasicTensor(Matrix::Constant(rows, cols, v));
  }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  std::string shape() const { return detail::shape_str(rows(), cols()); }

  const Matrix& value() const { return node_->value; }

  /// In-place access for optimizers and loaders; never use on a tensor that
  /// is part of a live graph.
  Matrix& mutable_value() { return node_->value; }

  Scalar item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape());
    return node_->value(0, 0);
  }

  /// Accumulated gradient; zeros when nothing has flowed into this tensor.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  }

  void zero_grad() {
    if (node_->requires_grad) {
      node_->grad.setZero(rows(), cols());
    } else {
      node_->grad.resize(0, 0);
    }
  }

  /// True when the tensor's value was produced by a recorded operation.
  bool has_history() const { return !node_->parents.empty(); }

  /// Identity of the underlying node (tensors are shared handles).
  const void* id() const { return node_.get(); }

  /// Records a result node. `backward` reads self.grad and accumulates into
  /// the parents that require gradients.
  static BasicTensor record(const char* op, Matrix value, std::vector<BasicTensor> inputs,
                            std::function<void(Node&)> backward) {
    if (!value.allFinite()) throw NumericError(std::string(op) + " produced a non-finite value");
    BasicTensor out(std::make_shared<Node>());
    out.node_->value = std::move(value);
    if (!grad_mode_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.node_->requires_grad;
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(std::move(in.node_));
    out.node_->backward = std::move(backward);
    return out;
  }

  template <typename S>
  friend void backward(const BasicTensor<S>& root);

 private:
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;
};

/// Propagates d(root)/d(x) into every reachable tensor that requires
/// gradients, then frees the recorded graph.
template <typename Scalar>
void backward(const BasicTensor<Scalar>& root) {
  using Node = detail::Node<Scalar>;
  if (root.rows() != 1 || root.cols() != 1)
    throw ContractError("backward() requires a 1x1 root, got " + root.shape());

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* start = root.node_.get();
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  start->accumulate(RowMatrix<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->parents.empty()) {
      n->parents.clear();
      n->backward = nullptr;
    }
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + a.shape() + " x " + b.shape());
  typename BasicTensor<Scalar>::Matrix out = a.value() * b.value();
  return BasicTensor<Scalar>::record("matmul", std::move(out), {a, b}, [](auto& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) lhs.accumulate(self.grad * rhs.value.transpose());
    if (rhs.requires_grad) rhs.accumulate(lhs.value.transpose() * self.grad);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return matmul(a, b);
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  typename BasicTensor<Scalar>::Matrix out = a.value().transpose();
  return BasicTensor<Scalar>::record("transpose", std::move(out), {a}, [](auto& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

namespace detail {
template <typename Scalar>
void require_same_shape(const char* op, const BasicTensor<Scalar>& a,
                        const BasicTensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch, " + a.shape() + " vs " + b.shape());
}
}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  typename BasicTensor<Scalar>::Matrix out = a.value() + b.value();
  return BasicTensor<Scalar>::record("add", std::move(out), {a, b}, [](auto& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  typename BasicTensor<Scalar>::Matrix out = a.value() - b.value();
  return BasicTensor<Scalar>::record("sub", std::move(out), {a, b}, [](auto& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("hadamard", a, b);
  typename BasicTensor<Scalar>::Matrix out = a.value().cwiseProduct(b.value());
  return BasicTensor<Scalar>::record("hadamard", std::move(out), {a, b}, [](auto& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) lhs.accumulate(self.grad.cwiseProduct(rhs.value));
    if (rhs.requires_grad) rhs.accumulate(self.grad.cwiseProduct(lhs.value));
  });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar c) {
  typename BasicTensor<Scalar>::Matrix out = a.value() * c;
  return BasicTensor<Scalar>::record("scale", std::move(out), {a}, [c](auto& self) {
    self.parents[0]->accumulate(self.grad * c);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, Scalar c) {
  return scale(a, c);
}

template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar c, const BasicTensor<Scalar>& a) {
  return scale(a, c);
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a) {
  return scale(a, Scalar(-1));
}

template <typename Scalar>
BasicTensor<Scalar> tanh(const BasicTensor<Scalar>& a) {
  typename BasicTensor<Scalar>::Matrix out = a.value().array().tanh().matrix();
  return BasicTensor<Scalar>::record("tanh", std::move(out), {a}, [](auto& self) {
    self.parents[0]->accumulate(
        (self.grad.array() * (Scalar(1) - self.value.array().square())).matrix());
  });
}

/// relu'(0) is taken as 0.
template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  typename BasicTensor<Scalar>::Matrix out = a.value().cwiseMax(Scalar(0));
  return BasicTensor<Scalar>::record("relu", std::move(out), {a}, [](auto& self) {
    auto& in = *self.parents[0];
    in.accumulate((in.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0)).matrix());
  });
}

template <typename Scalar>
BasicTensor<Scalar> sigmoid(const BasicTensor<Scalar>& a) {
  typename BasicTensor<Scalar>::Matrix out =
      (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  return BasicTensor<Scalar>::record("sigmoid", std::move(out), {a}, [](auto& self) {
    self.parents[0]->accumulate(
        (self.grad.array() * self.value.array() * (Scalar(1) - self.value.array())).matrix());
  });
}

/// Adds a 1xN row to every row of an MxN tensor (affine bias).
template <typename Scalar>
BasicTensor<Scalar> add_rowwise(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_rowwise: bias " + row.shape() + " does not fit " + a.shape());
  typename BasicTensor<Scalar>::Matrix out = a.value().rowwise() + row.value().row(0);
  return BasicTensor<Scalar>::record("add_rowwise", std::move(out), {a, row}, [](auto& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row counts differ, " + a.shape() + " vs " + b.shape());
  typename BasicTensor<Scalar>::Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index split = a.cols();
  return BasicTensor<Scalar>::record("concat_cols", std::move(out), {a, b}, [split](auto& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) lhs.accumulate(self.grad.leftCols(split));
    if (rhs.requires_grad) rhs.accumulate(self.grad.rightCols(self.grad.cols() - split));
  });
}

/// Stacks tensors with equal column counts on top of each other.
template <typename Scalar>
BasicTensor<Scalar> concat_rows(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw DimensionError("concat_rows: column counts differ, " + parts.front().shape() + " vs " +
                           p.shape());
    rows += p.rows();
  }
  typename BasicTensor<Scalar>::Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return BasicTensor<Scalar>::record(
      "concat_rows", std::move(out), {parts.begin(), parts.end()}, [](auto& self) {
        Eigen::Index offset = 0;
        for (auto& p : self.parents) {
          const Eigen::Index n = p->value.rows();
          if (p->requires_grad) p->accumulate(self.grad.middleRows(offset, n));
          offset += n;
        }
      });
}

template <typename Scalar>
BasicTensor<Scalar> concat_rows(const std::vector<BasicTensor<Scalar>>& parts) {
  return concat_rows(std::span<const BasicTensor<Scalar>>(parts));
}

template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& a, Eigen::Index start,
                               Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + a.shape());
  typename BasicTensor<Scalar>::Matrix out = a.value().middleCols(start, count);
  return BasicTensor<Scalar>::record("slice_cols", std::move(out), {a}, [start](auto& self) {
    auto& in = *self.parents[0];
    typename BasicTensor<Scalar>::Matrix g =
        BasicTensor<Scalar>::Matrix::Zero(in.value.rows(), in.value.cols());
    g.middleCols(start, self.grad.cols()) = self.grad;
    in.accumulate(g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& a, Eigen::Index start,
                               Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + a.shape());
  typename BasicTensor<Scalar>::Matrix out = a.value().middleRows(start, count);
  return BasicTensor<Scalar>::record("slice_rows", std::move(out), {a}, [start](auto& self) {
    auto& in = *self.parents[0];
    typename BasicTensor<Scalar>::Matrix g =
        BasicTensor<Scalar>::Matrix::Zero(in.value.rows(), in.value.cols());
    g.middleRows(start, self.grad.rows()) = self.grad;
    in.accumulate(g);
  });
}

/// Sum of all entries as a 1x1 tensor.
template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  typename BasicTensor<Scalar>::Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return BasicTensor<Scalar>::record("sum", std::move(out), {a}, [](auto& self) {
    auto& in = *self.parents[0];
    in.accumulate(BasicTensor<Scalar>::Matrix::Constant(in.value.rows(), in.value.cols(),
                                                        self.grad(0, 0)));
  });
}

using Tensor = BasicTensor<double>;
using Matrix = Tensor::Matrix;

}  // namespace rja

namespace rja {

/// A trainable tensor with its dotted module path (e.g. "attention.iter2.W_ha").
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

}  // namespace rja
