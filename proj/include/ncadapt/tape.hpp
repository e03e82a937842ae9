#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "ncadapt/errors.hpp"
#include "ncadapt/tensor.hpp"

namespace ncadapt {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kNone;
  bool valid() const { return id != kNone; }
};

template <class T>
class Tape;

/// Result of Tape::backward. Unreached nodes report a zero gradient.
template <class T>
class Gradients {
 public:
  const BasicTensor<T>& operator[](Var v) const {
    if (v.id >= grads_.size()) throw UsageError("gradient requested for unrecorded node");
    return grads_[v.id];
  }

 private:
  friend class Tape<T>;
  std::vector<BasicTensor<T>> grads_;
};

/// Single-writer record of a computation. Nodes are appended in evaluation
/// order, so backward() is a reverse walk over the node list.
template <class T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  // Receives the gradient of the node's output and accumulates into inputs
  // through grad_buffer().
  using BackwardFn = std::function<void(Tape&, const TensorT& grad_out)>;

  Var leaf(TensorT value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
  }
  Var constant(TensorT value) { return leaf(std::move(value), false); }

  // Called by ops. The closure is discarded when no input needs a gradient.
  Var record(const char* op, TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{}, op);
  }

  const TensorT& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Only meaningful inside backward().
  TensorT& grad_buffer(Var v) {
    TensorT& g = grads_.at(v.id);
    if (g.empty()) g = TensorT::zeros(nodes_[v.id].value.shape());
    return g;
  }

  Gradients<T> backward(Var loss) {
    const Node& l = node(loss);
    if (l.value.size() != 1) throw UsageError("backward requires a scalar loss, got shape " + shape_str(l.value.shape()));
    grads_.assign(nodes_.size(), TensorT{});
    grads_[loss.id] = TensorT::full(l.value.shape(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || grads_[i].empty()) continue;
      // Copy: the closure may create grad buffers, but never for node i itself.
      const TensorT& g = grads_[i];
      n.backward(*this, g);
    }
    Gradients<T> out;
    out.grads_ = std::move(grads_);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (out.grads_[i].empty()) out.grads_[i] = TensorT::zeros(nodes_[i].value.shape());
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    TensorT value;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "";
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw UsageError("variable is not recorded on this tape");
    return nodes_[v.id];
  }

  Var push(TensorT value, bool requires_grad, BackwardFn fn, const char* op) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(fn), op});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;  // deque keeps value() references valid as the tape grows
  std::vector<TensorT> grads_;
};

}  // namespace ncadapt
