#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hexlink/num/params.hpp"
#include "hexlink/num/tensor.hpp"

namespace hexlink::num {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so the
// creation order is a topological order and backward() walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor2 value);
  // Leaf bound to a parameter; backward() accumulates into param.grad()
  // unless the parameter is frozen.
  Var param(Param& p);

  // Used by ops: records `value` with the given parents. `backward` runs only
  // when some parent requires a gradient. Throws NumericGuardError if the
  // value holds NaN or Inf.
  Var record(const char* op, Tensor2 value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(const char* op, Tensor2 value, const std::vector<Var>& parents, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates.
  void backward(Var loss);

  const Tensor2& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor2& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer, allocated on first use.
  Tensor2& grad(std::uint32_t id);
  Tensor2& grad(Var v) { return grad(v.id()); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    BackwardFn backward;
    Param* param = nullptr;
    bool requires_grad = false;
    bool grad_allocated = false;
  };

  Var push(const char* op, Tensor2 value, bool requires_grad, BackwardFn backward);

  std::vector<Node> nodes_;
};

}  // namespace hexlink::num
