#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rglm {

// Two-dimensional shape. Vectors are 1 x n, scalars 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  Node(Shape s, std::vector<double> v, bool rg);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense double-precision array participating in a define-by-run reverse-mode
// computation record. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double v, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::size_t size() const { return shape().size(); }

  std::span<const double> values() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const;
  // Gradient of the most recent backward pass; zeros when never reached.
  std::vector<double> grad() const;
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;

  // Populates gradients of every requires_grad leaf reachable from this
  // scalar. Leaf gradients accumulate across calls until zero_grad().
  void backward() const;

  // Internal: ops construct results through this.
  static Tensor make(Shape shape, std::vector<double> values,
                     std::vector<Tensor> parents,
                     std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// While alive on a thread, ops on that thread record no history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Live / high-water bytes of tensor storage (values plus gradients), across
// all threads. Used by timing reports as an allocator analog.
std::size_t tensor_live_bytes();
std::size_t tensor_peak_bytes();
void reset_tensor_peak_bytes();

}  // namespace rglm
