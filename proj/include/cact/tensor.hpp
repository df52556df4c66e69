#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cact/errors.hpp"

namespace cact {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be >= 1");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // lazily allocated, same length as values
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // accumulates into parents' grads

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

// RAII guard: ops created inside the scope record no graph edges.
class NoGrad {
 public:
  NoGrad() { ++detail::no_grad_depth; }
  ~NoGrad() { --detail::no_grad_depth; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->values.assign(shape_size(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor constant(Shape shape, double value) {
    auto n = std::make_shared<detail::Node>();
    n->values.assign(shape_size(shape), value);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double value) { return constant({1}, value); }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size())
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // Builds an op-produced tensor and wires the backward closure unless grad
  // recording is disabled or no parent participates in differentiation.
  static Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                        const std::vector<Tensor>& parents,
                        std::function<void(detail::Node&)> backward_fn) {
    if (shape_size(shape) != values.size())
      throw DimensionError(std::string(op) + ": output buffer does not match shape");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = op;
    bool need = false;
    if (detail::no_grad_depth == 0) {
      for (const auto& p : parents) need = need || p.requires_grad();
    }
    if (need) {
      n->requires_grad = true;
      for (const auto& p : parents) n->parents.push_back(p.node_);
      n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  std::size_t rank() const { return check().shape.size(); }
  std::size_t extent(std::size_t axis) const { return check().shape.at(axis); }
  std::size_t size() const { return check().values.size(); }

  const std::vector<double>& values() const { return check().values; }

  // In-place mutation is reserved for leaves (parameters, running stats);
  // op outputs are immutable by contract.
  std::vector<double>& data() {
    detail::Node& n = check();
    if (n.op != std::string_view("leaf"))
      throw ContractError("only leaf tensors may be mutated in place");
    return n.values;
  }

  bool requires_grad() const { return check().requires_grad; }

  void set_requires_grad(bool v) {
    detail::Node& n = check();
    if (n.op != std::string_view("leaf"))
      throw ContractError("requires_grad is settable on leaves only");
    n.requires_grad = v;
  }

  bool has_grad() const { return defined() && !node_->grad.empty(); }

  const std::vector<double>& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient; run backward first");
    return node_->grad;
  }

  std::vector<double>& grad_buffer() {
    detail::Node& n = check();
    n.ensure_grad();
    return n.grad;
  }

  void zero_grad() {
    if (defined()) node_->grad.assign(node_->values.size(), 0.0);
  }

  double item() const {
    const detail::Node& n = check();
    if (n.values.size() != 1) throw ContractError("item() requires a scalar tensor");
    return n.values[0];
  }

  double at(std::initializer_list<std::size_t> idx) const {
    const detail::Node& n = check();
    if (idx.size() != n.shape.size()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0, axis = 0;
    for (std::size_t i : idx) {
      if (i >= n.shape[axis]) throw DimensionError("index out of range");
      flat = flat * n.shape[axis] + i;
      ++axis;
    }
    return n.values[flat];
  }

  // Reverse-mode sweep from a scalar loss. Gradients accumulate: callers who
  // want fresh gradients must zero them between sweeps.
  void backward() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  detail::Node& check() const {
    if (!node_) throw ContractError("operation on an undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Iterative post-order topological sort of the DAG reachable from root.
inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

inline void Tensor::backward() const {
  detail::Node& loss = check();
  if (loss.values.size() != 1) throw ContractError("backward requires a scalar loss");
  if (!loss.requires_grad)
    throw ContractError("backward requires a loss recorded with requires_grad");
  auto order = detail::topo_order(&loss);
  // Op-node gradients are per-sweep scratch; only leaf gradients persist, so
  // repeated sweeps accumulate into parameters without compounding through
  // the interior of the graph.
  for (detail::Node* n : order)
    if (n->backward_fn) n->grad.assign(n->values.size(), 0.0);
  loss.ensure_grad();
  loss.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

inline void backward(const Tensor& loss) { loss.backward(); }

// Read-only view of the recorded graph, in topological order. Used for
// diagnostics and for asserting graph structure in tests.
struct GraphNode {
  std::size_t id;
  std::string op;
  Shape shape;
  std::vector<std::size_t> parents;
};

class Graph {
 public:
  static Graph trace(const Tensor& root) {
    Graph g;
    auto order = detail::topo_order(root.node().get());
    std::unordered_map<detail::Node*, std::size_t> ids;
    for (detail::Node* n : order) {
      GraphNode info;
      info.id = ids.size();
      info.op = n->op;
      info.shape = n->shape;
      for (auto& p : n->parents) info.parents.push_back(ids.at(p.get()));
      ids[n] = info.id;
      g.nodes_.push_back(std::move(info));
    }
    return g;
  }

  const std::vector<GraphNode>& nodes() const { return nodes_; }

 private:
  std::vector<GraphNode> nodes_;
};

}  // namespace cact
