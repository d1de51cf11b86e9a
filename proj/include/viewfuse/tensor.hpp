#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace viewfuse {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grad buffers.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major float64 array that records its provenance so that
// backward() can populate gradients (define-by-run reverse mode).
//
// Copies are shallow: two Tensor handles may refer to the same graph node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t numel() const;
  bool requires_grad() const;
  std::string_view op() const;

  std::span<const double> values() const;
  // Writable access for leaves only (parameters, inputs).
  std::span<double> mutable_values();
  // Empty span when no gradient has reached this node.
  std::span<const double> grad() const;
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  // Populates grad on every requires_grad node reachable from this scalar.
  // Calling it twice on the same root without reset_graph_grads() throws.
  void backward() const;
  // Clears gradient buffers on the whole graph and re-arms backward().
  void reset_graph_grads() const;

  // Same values, no gradient path.
  Tensor detach() const;

  // Builds an op node. Used by the op implementations.
  static Tensor make_op(std::string_view op, Shape shape,
                        std::vector<double> values,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward);

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

}  // namespace viewfuse
