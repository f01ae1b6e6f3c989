#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ddm/core/tensor.hpp"

namespace ddm {

// A learnable tensor with its gradient accumulator. Running statistics and
// other non-learnable buffers are kept as plain Tensors by their modules.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor<S> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(Tensor<S>::zeros_like(value)) {}

  void zero_grad() { grad.zero(); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Operations append nodes eagerly; backward() walks the
// node list in reverse. One tape per forward pass.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape<S>&, const Tensor<S>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // External input; the caller keeps the tensor alive while the tape is used.
  Var input(const Tensor<S>& x) {
    nodes_.emplace_back();
    nodes_.back().ext_value = &x;
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Tensor<S> x) {
    nodes_.emplace_back();
    nodes_.back().owned = std::move(x);
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var param(Parameter<S>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var{it->second};
    nodes_.emplace_back();
    Node& nd = nodes_.back();
    nd.ext_value = &p.value;
    nd.grad_ext = grad_enabled_ ? &p.grad : nullptr;
    nd.needs = grad_enabled_;
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    return Var{id};
  }

  // New op node. `back` may be empty when gradients are disabled or no input
  // requires them.
  Var make(Tensor<S> value, std::vector<int> inputs, BackwardFn back) {
    bool req = false;
    if (grad_enabled_)
      for (int id : inputs) req = req || nodes_[id].needs;
    nodes_.emplace_back();
    Node& nd = nodes_.back();
    nd.owned = std::move(value);
    nd.needs = req;
    if (req) nd.back = std::move(back);
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& val(Var v) const { return nodes_.at(v.id).value(); }
  const Tensor<S>& val(int id) const { return nodes_.at(id).value(); }

  bool needs_grad(int id) const { return nodes_[id].needs; }

  // Gradient accumulator for a node, allocated on first use.
  Tensor<S>& grad_buf(int id) {
    Node& nd = nodes_[id];
    if (nd.grad_ext) return *nd.grad_ext;
    if (nd.grad.empty()) nd.grad = Tensor<S>::zeros_like(nd.value());
    return nd.grad;
  }

  // Gradient of a node after backward(); throws if it was never reached.
  const Tensor<S>& grad(Var v) const {
    const Node& nd = nodes_.at(v.id);
    if (nd.grad_ext) return *nd.grad_ext;
    if (nd.grad.empty()) throw std::logic_error("tape: no gradient at node");
    return nd.grad;
  }

  void backward(Var loss) {
    if (!grad_enabled_) throw std::logic_error("tape: backward with gradients disabled");
    const Tensor<S>& lv = val(loss);
    if (lv.size() != 1) throw std::invalid_argument("tape: backward needs a scalar loss");
    grad_buf(loss.id).v[0] = S(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& nd = nodes_[id];
      if (!nd.back) continue;
      if (nd.grad.empty() && !nd.grad_ext) continue;  // not reached from the loss
      nd.back(*this, nd.grad_ext ? *nd.grad_ext : nd.grad);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> owned;
    const Tensor<S>* ext_value = nullptr;
    Tensor<S> grad;
    Tensor<S>* grad_ext = nullptr;
    bool needs = false;
    BackwardFn back;

    const Tensor<S>& value() const { return ext_value ? *ext_value : owned; }
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> param_ids_;
};

}  // namespace ddm
