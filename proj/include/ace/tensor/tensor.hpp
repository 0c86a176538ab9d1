#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ace/config.hpp"

ACE_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Storage and graph node behind a Tensor handle.
///
/// A non-leaf node records its parents and a closure that pushes its
/// gradient into them. The closure and parent links are released once
/// backward() has visited the node, so the graph is single-use.
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::span<Real> grad_buffer();
  bool is_leaf() const { return parents.empty() && !backward; }
};

/// Reference-counted handle to a dense row-major tensor.
/// Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Size of axis i; negative i counts from the back.
  std::size_t dim(int i) const;
  std::size_t numel() const { return node_->data.size(); }
  /// Product of all axes except the last.
  std::size_t rows() const;
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  Real item() const;
  Real at(std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  /// Accumulated gradient; empty until backward() touched this tensor.
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  Tensor clone() const;
  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared_node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// True while operations should be recorded for backward.
bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode pass from a scalar loss. Every requires_grad leaf reachable
/// from `loss` has its total derivative added to its gradient buffer.
void backward(const Tensor& loss);

ACE_NAMESPACE_END
