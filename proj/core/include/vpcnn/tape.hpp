#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "vpcnn/tensor.hpp"

namespace vpcnn {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Dims& dims() const { return value().dims(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape.
///
/// Ops append nodes in execution order together with a backward rule that
/// scatters the node's output gradient into its inputs. Nodes that cannot
/// reach a parameter keep no rule. A tape constructed with recording=false
/// never keeps rules, which makes inference passes cheap.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Non-owning constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Learnable leaf. backward() adds d(loss)/d(param) into param.grad().
  Var parameter(Tensor& param);

  /// Appends an op result. `inputs` decide whether the rule is kept.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Adds `grad` into v's gradient buffer (no-op if v needs no gradient).
  void accumulate(Var v, std::span<const double> grad);
  /// Gradient buffer of v, allocated on first use.
  std::span<double> grad_buffer(Var v);
  /// Gradient of v after backward(); empty if v received none.
  std::span<const double> grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and replays backward rules in reverse order.
  /// Throws UsageError unless loss is a single-element value on this tape.
  void backward(Var loss);

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  bool recording_;
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

}  // namespace vpcnn
