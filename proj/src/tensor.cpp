#include "rglm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>
#include <utility>

#include "rglm/error.hpp"

namespace rglm {

namespace {

std::atomic<std::size_t> g_live_bytes{0};
std::atomic<std::size_t> g_peak_bytes{0};

void track_alloc(std::size_t bytes) {
  std::size_t now = g_live_bytes.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

void track_free(std::size_t bytes) { g_live_bytes.fetch_sub(bytes); }

thread_local bool t_no_grad = false;

}  // namespace

std::string Shape::str() const {
  return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]";
}

namespace detail {

Node::Node(Shape s, std::vector<double> v, bool rg)
    : shape(s), value(std::move(v)), requires_grad(rg) {
  track_alloc(value.size() * sizeof(double));
}

Node::~Node() { track_free((value.size() + grad.size()) * sizeof(double)); }

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) {
    grad.assign(value.size(), 0.0);
    track_alloc(grad.size() * sizeof(double));
  }
  return grad;
}

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = prev_; }

std::size_t tensor_live_bytes() { return g_live_bytes.load(); }
std::size_t tensor_peak_bytes() { return g_peak_bytes.load(); }
void reset_tensor_peak_bytes() { g_peak_bytes.store(g_live_bytes.load()); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return full(rows, cols, 0.0, requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v, bool requires_grad) {
  return from(rows, cols, std::vector<double>(rows * cols, v), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
  if (values.size() != rows * cols) {
    throw DimensionError("tensor: " + std::to_string(values.size()) +
                         " values for shape " + Shape{rows, cols}.str());
  }
  return Tensor(std::make_shared<detail::Node>(Shape{rows, cols}, std::move(values),
                                               requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

Tensor Tensor::make(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                    std::function<void(detail::Node&)> backward) {
  bool rg = !t_no_grad && std::any_of(parents.begin(), parents.end(),
                        [](const Tensor& p) { return p.requires_grad(); });
  auto node = std::make_shared<detail::Node>(shape, std::move(values), rg);
  if (rg) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) {
      node->parents.push_back(p.node_);
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) {
    throw UsageError("tensor: use of undefined tensor");
  }
  return node_->shape;
}

std::span<const double> Tensor::values() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  shape();
  return node_->value;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const Shape& s = shape();
  if (r >= s.rows || c >= s.cols) {
    throw DimensionError("tensor: index (" + std::to_string(r) + ", " + std::to_string(c) +
                         ") out of range for " + s.str());
  }
  return node_->value[r * s.cols + c];
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("tensor: item() on non-scalar " + shape().str());
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<double> Tensor::grad() const {
  shape();
  if (node_->grad.empty()) {
    return std::vector<double>(node_->value.size(), 0.0);
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::detach() const { return from(rows(), cols(), node_->value, false); }

void Tensor::backward() const {
  if (size() != 1) {
    throw UsageError("backward: loss must be scalar, got " + shape().str());
  }
  if (!node_->requires_grad) {
    return;
  }
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior gradients are recomputed from scratch on every call.
  for (detail::Node* n : order) {
    if (n->backward && !n->grad.empty()) {
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
    }
  }
}

}  // namespace rglm
