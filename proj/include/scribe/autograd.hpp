#ifndef SCRIBE_AUTOGRAD_HPP
#define SCRIBE_AUTOGRAD_HPP

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "scribe/tensor.hpp"

namespace scribe {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// that produced it is alive and has not been reset.
class Variable {
 public:
  Variable() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Zero tensor until backward has populated it.
  Tensor grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Variable(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Ops append in execution order; backward walks them in
// exact reverse order once. A consumed tape must be reset before reuse.
class Tape {
 public:
  // Receives dL/d(output) and accumulates into inputs through accumulate().
  using BackwardFn = std::function<void(Tape&, const Eigen::ArrayXd& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Variable leaf(Tensor value, bool requires_grad = true);
  Variable constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op result. Throws NumericError when the value is not finite.
  Variable record(const std::string& op_name, Tensor value, const std::vector<Variable>& inputs,
                  BackwardFn backward);

  void backward(const Variable& loss);
  void reset();

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  Tensor grad(int id) const;

  // Adds g into the gradient buffer of v, if v participates in differentiation.
  void accumulate(const Variable& v, const Eigen::ArrayXd& g);
  // Direct access for ops that scatter-add into an input gradient.
  Eigen::ArrayXd* grad_buffer(const Variable& v);

  std::size_t op_count() const { return ops_.size(); }
  bool consumed() const { return consumed_; }
  // Op indices in the order the last backward pass visited them.
  const std::vector<std::size_t>& last_backward_order() const { return visited_; }
  const std::string& op_name(std::size_t op) const { return ops_.at(op).name; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Eigen::ArrayXd grad;  // empty until touched
  };
  struct Op {
    std::string name;
    int output = -1;
    BackwardFn backward;
  };

  void check_owner(const Variable& v) const;

  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  std::vector<std::size_t> visited_;
  bool consumed_ = false;
};

// Central-difference gradient check of a scalar-valued function. Returns
// max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|).
double grad_check(const std::function<Variable(Tape&, const Variable&)>& f, const Tensor& x,
                  double eps = 1e-5);

// Same, over several inputs at once (every input is perturbed in turn).
double grad_check(const std::function<Variable(Tape&, const std::vector<Variable>&)>& f,
                  const std::vector<Tensor>& xs, double eps = 1e-5);

}  // namespace scribe

#endif  // SCRIBE_AUTOGRAD_HPP
