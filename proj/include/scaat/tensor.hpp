#pragma once

// Dense tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to a graph node. Leaves hold user data
// (inputs, parameters); every op applied to a tensor that requires a
// gradient records a node with a backward closure. `backward` accumulates
// into leaf `.grad()` buffers, `gradients` returns gradients for a chosen
// set of leaves without touching them. Both consume the traversed graph.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace scaat {

using Shape = std::vector<std::size_t>;

template <typename T>
using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;

template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ')';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Added inside every log argument.
inline constexpr double kLogFloor = 1e-12;

template <typename T>
class Tensor;

namespace detail {

template <typename T>
class GradSink;

template <typename T>
struct Node {
  using BackwardFn = std::function<void(const Vec<T>&, GradSink<T>&)>;

  Shape shape;
  Vec<T> value;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::optional<Vec<T>> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

// Hands out accumulation buffers for the parents of the node being
// processed. A null slot means that parent needs no gradient.
template <typename T>
class GradSink {
 public:
  explicit GradSink(std::vector<Vec<T>*> slots) : slots_(std::move(slots)) {}
  Vec<T>* operator[](std::size_t i) const { return slots_[i]; }

 private:
  std::vector<Vec<T>*> slots_;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, Vec<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != static_cast<std::size_t>(values.size())) {
      throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = static_cast<Eigen::Index>(shape_numel(shape));
    return Tensor(std::move(shape), Vec<T>::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = static_cast<Eigen::Index>(shape_numel(shape));
    return Tensor(std::move(shape), Vec<T>::Constant(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::initializer_list<T> values,
                     bool requires_grad = false) {
    Vec<T> v(static_cast<Eigen::Index>(values.size()));
    std::copy(values.begin(), values.end(), v.data());
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return static_cast<std::size_t>(node_->value.size()); }

  const Vec<T>& values() const { return node_->value; }

  /// Mutable access is reserved for leaves (parameters, inputs).
  Vec<T>& values_mut() {
    if (!node_->is_leaf) throw GraphError("cannot mutate a non-leaf tensor in place");
    return node_->value;
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op_name() const { return node_->op; }

  const Vec<T>* grad() const { return node_->grad ? &*node_->grad : nullptr; }
  void zero_grad() { node_->grad.reset(); }

  /// Fresh leaf with a copy of the values and no history.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), values(), requires_grad);
  }

  Tensor reshaped_leaf(Shape shape) const {
    return Tensor(std::move(shape), values(), requires_grad());
  }

  const NodePtr& node() const { return node_; }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

/// Creates the result of an op. When no input requires a gradient the
/// result is a plain constant and `backward` is dropped.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Vec<T> value,
                      std::vector<Tensor<T>> inputs,
                      typename detail::Node<T>::BackwardFn backward) {
  Tensor<T> out(std::move(shape), std::move(value));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.is_leaf = false;
  node.op = op;
  node.backward = std::move(backward);
  for (auto& in : inputs) node.parents.push_back(in.node());
  return out;
}

struct BackwardStats {
  std::size_t nodes_visited = 0;
  std::size_t leaves_reached = 0;
};

namespace detail {

template <typename T>
BackwardStats run_backward(const Tensor<T>& loss,
                           const std::vector<const Node<T>*>* targets,
                           std::vector<Vec<T>>* target_grads, bool retain_graph = false) {
  using NodeT = Node<T>;
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  NodeT* root = loss.node().get();
  if (root->consumed) {
    throw GraphError("graph already consumed by a previous backward pass");
  }

  // Post-order DFS restricted to nodes that need a gradient.
  std::vector<NodeT*> order;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  auto is_target = [&](const NodeT* n) {
    if (!targets) return n->is_leaf && n->requires_grad;
    for (const auto* t : *targets) {
      if (t == n) return true;
    }
    return false;
  };
  // needed = on a path to a target leaf.
  std::unordered_map<const NodeT*, bool> needed;
  std::unordered_map<const NodeT*, int> state;  // 1 = on stack, 2 = done
  if (root->requires_grad) {
    stack.emplace_back(root, 0);
    state[root] = 1;
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (!node->is_leaf && node->consumed) {
      throw GraphError("graph already consumed by a previous backward pass");
    }
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      auto it = state.find(parent);
      if (it == state.end()) {
        state[parent] = 1;
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    bool need = is_target(node);
    if (!node->is_leaf) {
      for (const auto& p : node->parents) {
        auto it = needed.find(p.get());
        if (it != needed.end() && it->second) need = true;
      }
    }
    needed[node] = need;
    state[node] = 2;
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<const NodeT*, Vec<T>> grads;
  if (needed[root]) {
    grads[root] = Vec<T>::Ones(1);
  }
  BackwardStats stats;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (!needed[node]) continue;
    auto git = grads.find(node);
    if (git == grads.end()) continue;
    ++stats.nodes_visited;
    if (node->is_leaf) {
      ++stats.leaves_reached;
      continue;
    }
    std::vector<Vec<T>*> slots(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const NodeT* p = node->parents[i].get();
      auto nit = needed.find(p);
      if (nit == needed.end() || !nit->second) continue;
      auto [slot, inserted] = grads.try_emplace(p);
      if (inserted) slot->second = Vec<T>::Zero(p->value.size());
      slots[i] = &slot->second;
    }
    GradSink<T> sink(std::move(slots));
    node->backward(git->second, sink);
    grads.erase(git);
  }

  if (targets) {
    target_grads->clear();
    for (const auto* t : *targets) {
      auto git = grads.find(t);
      target_grads->push_back(git != grads.end() ? git->second
                                                 : Vec<T>::Zero(t->value.size()));
    }
  } else {
    for (NodeT* node : order) {
      if (!node->is_leaf || !node->requires_grad) continue;
      auto git = grads.find(node);
      if (git == grads.end()) continue;
      if (node->grad) {
        *node->grad += git->second;
      } else {
        node->grad = git->second;
      }
    }
  }

  if (retain_graph) return stats;
  for (NodeT* node : order) {
    if (node->is_leaf) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->consumed = true;
  }
  return stats;
}

}  // namespace detail

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient.
template <typename T>
BackwardStats backward(const Tensor<T>& loss) {
  return detail::run_backward<T>(loss, nullptr, nullptr);
}

/// Gradients of a scalar loss with respect to `leaves`, in order. Leaves the
/// loss does not depend on get an exact zero tensor. With `retain_graph`
/// the graph stays usable for another backward pass.
template <typename T>
std::vector<Tensor<T>> gradients(const Tensor<T>& loss,
                                 std::span<const Tensor<T>> leaves,
                                 BackwardStats* stats = nullptr, bool retain_graph = false) {
  std::vector<const detail::Node<T>*> targets;
  for (const auto& l : leaves) targets.push_back(l.node().get());
  std::vector<Vec<T>> raw;
  auto s = detail::run_backward<T>(loss, &targets, &raw, retain_graph);
  if (stats) *stats = s;
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    out.emplace_back(leaves[i].shape(), std::move(raw[i]));
  }
  return out;
}

template <typename T>
Tensor<T> gradient(const Tensor<T>& loss, const Tensor<T>& leaf) {
  std::vector<Tensor<T>> one{leaf};
  return gradients<T>(loss, one).front();
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return t.values().isFinite().all();
}

}  // namespace scaat
