#include "vpcnn/tape.hpp"

#include "vpcnn/error.hpp"

namespace vpcnn {

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
  Node n;
  n.ref = &param;
  n.param = recording_ ? &param : nullptr;
  n.requires_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.valid() && requires_grad(in)) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tape::Node& Tape::node(Var v) {
  if (v.tape() != this || v.id() >= nodes_.size()) throw UsageError("variable not on this tape");
  return nodes_[v.id()];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw UsageError("variable not on this tape");
  return nodes_[v.id()];
}

const Tensor& Tape::value(Var v) const { return node(v).value(); }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::grad(Var v) const { return node(v).grad; }

void Tape::accumulate(Var v, std::span<const double> grad) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (grad.size() != n.value().size()) throw ShapeError("gradient size mismatch on tape");
  if (n.grad.empty()) {
    n.grad.assign(grad.begin(), grad.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) n.grad[i] += grad[i];
}

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (root.value().size() != 1) throw UsageError("backward() needs a scalar loss");
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      n.param->enable_grad();
      auto dst = n.param->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
    if (n.backward) {
      n.backward(*this, n.grad);
      n.backward = nullptr;
    }
    if (!n.param && id != loss.id()) std::vector<double>().swap(n.grad);
  }
}

}  // namespace vpcnn
