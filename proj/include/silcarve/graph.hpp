#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "silcarve/tensor.hpp"

namespace silcarve {

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as the graph lives.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  bool tracked() const { return graph->tracked(*this); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// sequence is already topologically sorted and backward is one reverse sweep.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    const char* op = "";
    Tensor<Scalar> owned;
    const Tensor<Scalar>* ref = nullptr;
    Tensor<Scalar>* sink = nullptr;  // receives accumulated gradient after backward
    std::vector<Scalar> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool tracked = false;

    const Tensor<Scalar>& value() const { return ref ? *ref : owned; }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant input; never receives gradient.
  Var<Scalar> constant(Tensor<Scalar> t) { return leaf(std::move(t), false); }

  Var<Scalar> leaf(Tensor<Scalar> t, bool tracked) {
    auto& n = append("leaf");
    n.owned = std::move(t);
    n.tracked = tracked;
    return {this, nodes_.size() - 1};
  }

  /// Binds an external tensor without copying. If `t.requires_grad`, backward
  /// accumulates into `t.grad`.
  Var<Scalar> param(Tensor<Scalar>& t) {
    auto& n = append("param");
    n.ref = &t;
    n.tracked = t.requires_grad;
    if (t.requires_grad) n.sink = &t;
    return {this, nodes_.size() - 1};
  }

  /// Binds an external tensor read-only; gradients stay on the tape (see grad()).
  Var<Scalar> view(const Tensor<Scalar>& t, bool tracked) {
    auto& n = append("view");
    n.ref = &t;
    n.tracked = tracked;
    return {this, nodes_.size() - 1};
  }

  /// Appends an operation. The backward closure is dropped when no input is tracked.
  Var<Scalar> record(const char* op, Tensor<Scalar> out, std::vector<Var<Scalar>> inputs,
                     BackwardFn backward) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool tracked = false;
    for (const auto& v : inputs) {
      if (v.graph != this) throw Error(std::string(op) + ": operands belong to different graphs");
      ids.push_back(v.id);
      tracked = tracked || nodes_[v.id].tracked;
    }
    auto& n = append(op);
    n.owned = std::move(out);
    n.inputs = std::move(ids);
    n.tracked = tracked;
    if (tracked) n.backward = std::move(backward);
    return {this, nodes_.size() - 1};
  }

  const Tensor<Scalar>& value(Var<Scalar> v) const { return nodes_.at(v.id).value(); }
  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value(); }
  bool tracked(Var<Scalar> v) const { return nodes_.at(v.id).tracked; }
  bool tracked(std::size_t id) const { return nodes_.at(id).tracked; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward pass; empty for untracked nodes.
  const std::vector<Scalar>& grad(Var<Scalar> v) const { return nodes_.at(v.id).grad; }
  const std::vector<Scalar>& grad(std::size_t id) const { return nodes_.at(id).grad; }

  /// Output gradient of node `id` during backward.
  const std::vector<Scalar>& out_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Mutable gradient slot of input `k` of node `id`, or nullptr if that input is untracked.
  Scalar* in_grad(std::size_t id, std::size_t k) {
    auto& in = nodes_[nodes_[id].inputs[k]];
    return in.tracked ? in.grad.data() : nullptr;
  }
  const Tensor<Scalar>& in_value(std::size_t id, std::size_t k) const {
    return nodes_[nodes_[id].inputs[k]].value();
  }

  void backward(Var<Scalar> loss) {
    if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
    const auto& lv = value(loss);
    if (lv.size() != 1) throw Error("backward: loss must be scalar, got shape " + to_string(lv.shape));
    for (std::size_t i = 0; i <= loss.id; ++i) {
      auto& n = nodes_[i];
      if (n.tracked) n.grad.assign(n.value().size(), Scalar(0));
      else n.grad.clear();
    }
    if (!nodes_[loss.id].tracked) return;
    nodes_[loss.id].grad[0] = Scalar(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.tracked && n.backward) n.backward(*this, i);
    }
    for (std::size_t i = 0; i <= loss.id; ++i) {
      auto& n = nodes_[i];
      if (!n.sink) continue;
      if (n.sink->grad.size() != n.grad.size()) n.sink->grad.assign(n.grad.size(), Scalar(0));
      for (std::size_t j = 0; j < n.grad.size(); ++j) n.sink->grad[j] += n.grad[j];
    }
  }

 private:
  Node& append(const char* op) {
    nodes_.emplace_back();
    nodes_.back().op = op;
    return nodes_.back();
  }

  std::deque<Node> nodes_;  // deque: appending keeps references to earlier values valid
};

}  // namespace silcarve
