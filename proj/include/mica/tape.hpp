#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mica/matrix.hpp"

namespace mica::nd {

/// Trainable tensor with paired gradient storage.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
  std::size_t size() const { return value.size(); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations in execution order and replays them in
/// reverse to accumulate gradients. One tape per thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool training = false, std::uint64_t seed = 0) : training_(training), rng_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  Var param(Param& p);

  // Adds an op node. `inputs` decides whether the node needs a gradient at all;
  // `backward` reads grad(self) and accumulates into the inputs.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }

  // Gradient buffer of an input node, allocated on first use. Null when the
  // node does not participate in differentiation.
  Matrix* accum(std::size_t id);
  Matrix* accum(Var v) { return accum(v.id_); }

  // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. Gradients of
  // participating Params are added to Param::grad.
  void backward(Var loss);

  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  // Ids of op nodes in the order their backward closures ran during the last backward().
  const std::vector<std::size_t>& last_backward_order() const { return backward_order_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Param* param = nullptr;
    Backward backward;
    bool needs_grad = false;
  };

  Var push(Node n);

  std::deque<Node> nodes_;  // deque: references to values stay valid as the tape grows
  std::vector<std::size_t> backward_order_;
  bool training_;
  std::mt19937_64 rng_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

}  // namespace mica::nd
