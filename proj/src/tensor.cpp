#include "viewfuse/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "viewfuse/error.hpp"

namespace viewfuse {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape, std::size_t count) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError("dimension " + std::to_string(i) + " of shape " +
                       shape_str(shape) + " is not positive");
    }
  }
  if (numel(shape) != count) {
    throw ShapeError("shape " + shape_str(shape) + " needs " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(count));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = viewfuse::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const {
  const auto& s = node_->shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
std::string_view Tensor::op() const { return node_->op; }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (node_->backward) {
    throw GraphError("mutable_values() on non-leaf node '" +
                     std::string(node_->op) + "'");
  }
  return node_->value;
}

std::span<const double> Tensor::grad() const { return node_->grad; }

double Tensor::item() const {
  if (node_->value.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(node_->shape));
  }
  return node_->value[0];
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->value, false);
}

Tensor Tensor::make_op(std::string_view op, Shape shape,
                       std::vector<double> values, std::vector<Tensor> parents,
                       std::function<void(detail::Node&)> backward) {
  check_shape(shape, values.size());
#ifndef NDEBUG
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by '" + std::string(op) +
                         "'");
    }
  }
#endif
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  for (auto& p : parents) {
    if (p.node_->requires_grad) node->requires_grad = true;
    node->parents.push_back(p.node_);
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return Tensor(std::move(node));
}

namespace {

// Reverse topological order (root first). Throws on a cycle.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  enum class Mark { kOpen, kDone };
  std::unordered_map<detail::Node*, Mark> marks;
  std::vector<detail::Node*> post;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root, 0}};
  marks[root] = Mark::kOpen;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (!p->requires_grad) continue;
      auto it = marks.find(p);
      if (it == marks.end()) {
        marks[p] = Mark::kOpen;
        stack.push_back({p, 0});
      } else if (it->second == Mark::kOpen) {
        throw GraphError("cycle detected at node '" + std::string(p->op) + "'");
      }
    } else {
      marks[f.node] = Mark::kDone;
      post.push_back(f.node);
      stack.pop_back();
    }
  }
  return {post.rbegin(), post.rend()};
}

}  // namespace

void Tensor::backward() const {
  if (!node_) throw GraphError("backward() on undefined tensor");
  if (node_->value.size() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " +
                     shape_str(node_->shape));
  }
  if (node_->backward_done) {
    throw GraphError("backward() called twice without reset_graph_grads()");
  }
  if (!node_->requires_grad) {
    node_->backward_done = true;
    return;
  }
  const auto order = topo_order(node_.get());
  node_->grad_buffer()[0] += 1.0;
  for (detail::Node* n : order) {
    if (n->backward && !n->grad.empty()) {
      for (auto& p : n->parents) {
        if (p->requires_grad) p->grad_buffer();
      }
      n->backward(*n);
    }
  }
  node_->backward_done = true;
}

void Tensor::reset_graph_grads() const {
  if (!node_) return;
  if (node_->requires_grad) {
    for (detail::Node* n : topo_order(node_.get())) n->grad.clear();
  }
  node_->backward_done = false;
}

}  // namespace viewfuse
