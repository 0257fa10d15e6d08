#include "scribe/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "scribe/error.hpp"

namespace scribe {

const Tensor& Variable::value() const {
  if (!tape_) throw UsageError("use of an empty Variable");
  return tape_->value(id_);
}

bool Variable::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tensor Variable::grad() const {
  if (!tape_) throw UsageError("use of an empty Variable");
  return tape_->grad(id_);
}

Variable Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw UsageError("tape already consumed by backward; call reset() first");
  if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor " + shape_string(value.shape()));
  nodes_.push_back(Node{std::move(value), requires_grad, {}});
  return Variable(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::check_owner(const Variable& v) const {
  if (v.tape_ != this) throw UsageError("variable belongs to a different tape");
}

Variable Tape::record(const std::string& op_name, Tensor value, const std::vector<Variable>& inputs,
                      BackwardFn backward) {
  if (consumed_) throw UsageError("tape already consumed by backward; call reset() first");
  if (!value.all_finite()) {
    throw NumericError(op_name + " produced a non-finite value (output shape " + shape_string(value.shape()) + ")");
  }
  bool needs_grad = false;
  for (const Variable& in : inputs) {
    check_owner(in);
    needs_grad = needs_grad || nodes_[static_cast<std::size_t>(in.id_)].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs_grad, {}});
  const int out = static_cast<int>(nodes_.size() - 1);
  ops_.push_back(Op{op_name, out, needs_grad ? std::move(backward) : BackwardFn{}});
  return Variable(this, out);
}

void Tape::backward(const Variable& loss) {
  check_owner(loss);
  if (consumed_) throw UsageError("backward called twice on the same tape without reset");
  Node& root = nodes_[static_cast<std::size_t>(loss.id_)];
  if (root.value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  consumed_ = true;
  visited_.clear();
  if (!root.requires_grad) return;
  root.grad = Eigen::ArrayXd::Ones(1);
  for (std::size_t k = ops_.size(); k-- > 0;) {
    Op& op = ops_[k];
    visited_.push_back(k);
    Node& out = nodes_[static_cast<std::size_t>(op.output)];
    if (!op.backward || out.grad.size() == 0) continue;
    // Op outputs are never leaves, so their gradient can be handed over.
    const Eigen::ArrayXd g = std::move(out.grad);
    out.grad = Eigen::ArrayXd();
    op.backward(*this, g);
  }
}

void Tape::reset() {
  nodes_.clear();
  ops_.clear();
  visited_.clear();
  consumed_ = false;
}

Tensor Tape::grad(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.size() == 0) return Tensor::zeros(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

Eigen::ArrayXd* Tape::grad_buffer(const Variable& v) {
  check_owner(v);
  Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() == 0) n.grad = Eigen::ArrayXd::Zero(n.value.size());
  return &n.grad;
}

void Tape::accumulate(const Variable& v, const Eigen::ArrayXd& g) {
  if (Eigen::ArrayXd* buf = grad_buffer(v)) *buf += g;
}

double grad_check(const std::function<Variable(Tape&, const std::vector<Variable>&)>& f,
                  const std::vector<Tensor>& xs, double eps) {
  if (!(eps > 0.0)) throw ParameterError("grad_check eps must be positive");

  auto evaluate = [&](const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Variable> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, false));
    const Variable out = f(tape, vars);
    if (out.value().size() != 1) {
      throw ContractError("grad_check needs a scalar-valued function, got shape " + shape_string(out.shape()));
    }
    return out.value()[0];
  };

  Tape tape;
  std::vector<Variable> vars;
  for (const Tensor& x : xs) vars.push_back(tape.leaf(x, true));
  const Variable out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ContractError("grad_check needs a scalar-valued function, got shape " + shape_string(out.shape()));
  }
  tape.backward(out);

  double worst = 0.0;
  std::vector<Tensor> probe = xs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor analytic = vars[k].grad();
    for (Index i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      probe[k][i] = orig + eps;
      const double up = evaluate(probe);
      probe[k][i] = orig - eps;
      const double down = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Variable(Tape&, const Variable&)>& f, const Tensor& x, double eps) {
  return grad_check([&](Tape& t, const std::vector<Variable>& v) { return f(t, v[0]); },
                    std::vector<Tensor>{x}, eps);
}

}  // namespace scribe
