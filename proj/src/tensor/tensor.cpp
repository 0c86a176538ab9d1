#include "ace/tensor/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

ACE_NAMESPACE_BEGIN

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::span<Real> TensorNode::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<Real> data, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  if (shape.empty()) shape = {1};
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("Tensor: zero-sized axis in shape " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

std::size_t Tensor::dim(int i) const {
  const int r = static_cast<int>(rank());
  const int idx = i < 0 ? r + i : i;
  if (idx < 0 || idx >= r) throw std::out_of_range("Tensor::dim: axis out of range");
  return node_->shape[static_cast<std::size_t>(idx)];
}

std::size_t Tensor::rows() const { return numel() / cols(); }

Real Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->data, requires_grad()); }

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is not on the tape");

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward) node->backward(*node);
  }
  for (TensorNode* node : order) {
    if (!node->is_leaf()) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

ACE_NAMESPACE_END
