#include "mica/tape.hpp"

#include "mica/errors.hpp"

namespace mica::nd {

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix m) {
  Node n;
  n.value = std::move(m);
  return push(std::move(n));
}

Var Tape::param(Param& p) {
  if (!p.grad.same_shape(p.value)) p.zero_grad();
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw ConfigError("Var belongs to a different tape");
    n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw ConfigError("Var belongs to a different tape");
    n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Matrix* Tape::accum(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ConfigError("loss Var belongs to a different tape");
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + lv.shape_str());
  }
  for (Node& n : nodes_) n.grad = Matrix();
  backward_order_.clear();
  if (Matrix* g = accum(loss.id_)) (*g)(0, 0) = 1.0;

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) {
      backward_order_.push_back(id);
      n.backward(*this, id);
    } else if (n.param != nullptr) {
      n.param->grad += n.grad;
    }
  }
}

}  // namespace mica::nd
