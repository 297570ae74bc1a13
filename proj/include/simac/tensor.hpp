#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Operations build a new node
// that remembers its parents and a closure that pushes gradients back to them.
// Nodes are created in a strictly increasing sequence, so sorting reachable
// nodes by sequence number yields a valid reverse topological order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace simac {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class graph_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient is written
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void accumulate(std::span<const double> g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct BackwardReport {
  std::size_t nodes_visited = 0;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    for (auto e : shape)
      if (e == 0) throw shape_error("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw shape_error("tensor of shape " + shape_str(shape) + " needs " +
                        std::to_string(shape_numel(shape)) + " values, got " +
                        std::to_string(values.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = detail::next_seq();
    return Tensor(std::move(node));
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t numel() const { return node().value.size(); }

  std::span<const double> data() const { return node().value; }
  /// In-place write access. Only meaningful on leaves (parameters, perturbations).
  std::span<double> mutable_data() { return node().value; }
  std::vector<double> to_vector() const { return node().value; }
  double operator[](std::size_t i) const { return node().value[i]; }

  double item() const {
    if (numel() != 1) throw shape_error("item() on tensor of shape " + shape_str(shape()));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node().leaf) throw graph_error("requires_grad can only be toggled on leaf tensors");
    node().requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node().leaf; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const {
    if (node().grad.empty()) throw graph_error("tensor has no gradient");
    return node().grad;
  }
  Tensor grad_tensor() const { return from(shape(), std::vector<double>(grad().begin(), grad().end())); }
  void zero_grad() { node().grad.clear(); }

  /// Fresh leaf holding a copy of the values and no history.
  Tensor detach() const { return from(shape(), node().value); }
  Tensor clone(bool requires_grad) const { return from(shape(), node().value, requires_grad); }

  BackwardReport backward() const;

  // Internal access for op implementations.
  detail::Node& node() const {
    if (!node_) throw graph_error("use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Records a result node. `backprop` receives the result node, whose grad is
/// populated, and must accumulate into parents that require grad.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = next_seq();
  node->leaf = true;
  if (grad_enabled()) {
    // A node released by an earlier backward() acts as a constant.
    bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) {
      return p.requires_grad() && !p.node().released;
    });
    if (any) {
      node->requires_grad = true;
      node->leaf = false;
      node->parents.reserve(parents.size());
      for (auto& p : parents)
        if (!p.node().released) node->parents.push_back(p.handle());
      node->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

inline BackwardReport Tensor::backward() const {
  auto& root = node();
  if (root.released)
    throw graph_error("backward() called twice on the same graph; re-run the forward pass");
  if (root.value.size() != 1)
    throw shape_error("backward() needs a scalar loss, got shape " + shape_str(root.shape));
  if (!root.requires_grad) throw graph_error("loss does not depend on any tensor requiring grad");

  // Collect every node reachable from the root. Strong references keep
  // interior nodes alive while the tape is released below.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{node_};
  seen.insert(&root);
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  root.grad_buffer()[0] += 1.0;
  BackwardReport report;
  for (auto& n : order) {
    ++report.nodes_visited;
    if (n->leaf) continue;
    if (!n->grad.empty() && n->backprop) n->backprop(*n);
  }
  // Release the tape. Interior gradients are scratch space.
  for (auto& n : order) {
    if (n->leaf) continue;
    n->backprop = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
  return report;
}

}  // namespace simac
