#include "hexlink/num/tape.hpp"

#include <cmath>

#include "hexlink/errors.hpp"

namespace hexlink::num {

const Tensor2& Var::value() const { return tape_->value(id_); }

Var Tape::push(const char* op, Tensor2 value, bool requires_grad, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericGuardError(std::string("non-finite output from '") + op + "' " + value.shape_str() +
                            " at tape node " + std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor2 value) { return push("constant", std::move(value), false, nullptr); }

Var Tape::param(Param& p) {
  Var v = push(p.name().c_str(), p.value(), !p.frozen, nullptr);
  if (!p.frozen) nodes_[v.id()].param = &p;
  return v;
}

Var Tape::record(const char* op, Tensor2 value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || nodes_[p.id()].requires_grad;
  return push(op, std::move(value), rg, std::move(backward));
}

Var Tape::record(const char* op, Tensor2 value, const std::vector<Var>& parents, BackwardFn backward) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || nodes_[p.id()].requires_grad;
  return push(op, std::move(value), rg, std::move(backward));
}

Tensor2& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.grad_allocated) {
    n.grad = Tensor2(n.value.rows(), n.value.cols());
    n.grad_allocated = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward needs a 1x1 loss, got " + loss.value().shape_str());
  }
  if (!std::isfinite(loss.value()(0, 0))) throw NumericGuardError("non-finite loss");
  grad(loss.id())(0, 0) += 1.0;
  for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad_allocated) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) add_inplace(n.param->grad(), nodes_[i].grad);
  }
}

}  // namespace hexlink::num
