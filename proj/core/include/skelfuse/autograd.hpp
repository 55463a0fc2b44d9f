#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skelfuse/tensor.hpp"

namespace skelfuse {

template <typename T>
struct BasicParameter {
  BasicParameter() = default;
  explicit BasicParameter(BasicTensor<T> init, std::string param_name = {})
      : value(std::move(init)),
        grad(BasicTensor<T>::zeros(value.shape())),
        momentum_buffer(BasicTensor<T>::zeros(value.shape())),
        name(std::move(param_name)) {}

  void zero_grad() { grad.fill(T{0}); }

  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> momentum_buffer;
  std::string name;
};

using Parameter = BasicParameter<float>;

template <typename T>
class BasicTape;

/// Handle to a node recorded on a tape. Cheap to copy; only valid until the tape is cleared.
template <typename T>
struct BasicVar {
  BasicTape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Record of executed differentiable operations. Backward replays the record in exact reverse
/// execution order, accumulates into every reachable Parameter's grad, and clears the tape.
template <typename T>
class BasicTape {
 public:
  using Var = BasicVar<T>;
  using Tensor = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicTape&, const Tensor& out_grad)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf bound to a parameter; backward accumulates into param.grad.
  Var leaf(BasicParameter<T>& param) { return push(param.value, true, &param, {}); }

  /// Parameter value without gradient tracking (frozen / evaluation use).
  Var frozen(const BasicParameter<T>& param) { return push(param.value, false, nullptr, {}); }

  /// Records an operation result. `backward` runs only if one of `inputs` requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record_many(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var record_many(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Adds `g` into the gradient slot of `v` if it participates in differentiation.
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) throw_shape("gradient accumulate", g.shape(), n.value.shape());
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Mutable gradient slot, allocated zero-filled on first use.
  Tensor& grad_slot(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw_usage("backward: loss belongs to another tape");
    if (nodes_.empty()) throw_usage("backward: tape is empty");
    const Tensor& lv = value(loss);
    if (lv.numel() != 1) throw_usage("backward: loss must be scalar, got " + shape_string(lv.shape()));
    if (requires_grad(loss)) {
      grad_slot(loss).fill(T{1});
      for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.has_grad) continue;
        if (n.param != nullptr) {
          auto dst = n.param->grad.data();
          auto src = n.grad.data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        } else if (n.backward) {
          // Move the closure out so the node may be released while it runs.
          BackwardFn fn = std::move(n.backward);
          Tensor g = std::move(n.grad);
          n.has_grad = false;
          fn(*this, g);
        }
      }
    }
    clear();
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BasicParameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BasicParameter<T>* param, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  // deque keeps references to earlier node values stable while new nodes are pushed
  std::deque<Node> nodes_;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;

}  // namespace skelfuse
