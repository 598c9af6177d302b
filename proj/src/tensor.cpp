#include "punc/tensor.hpp"

#include <cmath>
#include <sstream>

#include "punc/error.hpp"

namespace punc::ad {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

void set_shape(Node& n, Shape shape) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got " + shape_string(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("zero dimension in shape " + shape_string(shape));
  }
  n.rows = shape.size() == 1 ? 1 : shape[0];
  n.cols = shape.back();
  n.shape = std::move(shape);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  set_shape(*n, std::move(shape));
  n->value.assign(n->rows * n->cols, 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  set_shape(*n, std::move(shape));
  if (values.size() != n->rows * n->cols) {
    throw ShapeError("value buffer of length " + std::to_string(values.size()) +
                     " does not fill shape " + shape_string(n->shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor literal");
  }
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
  }
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tape::Tape(std::uint64_t seed, bool record) : seed_(seed), rng_(seed), record_(record) {}

void Tape::record(std::shared_ptr<Node> node) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  node->tape = this;
  ops_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("tape reuse: backward() already ran on this tape");
  if (!record_) throw ContractError("backward() on a non-recording tape");
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  if (loss.node()->tape != this) {
    throw ContractError("loss was not produced on this tape");
  }
  consumed_ = true;
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
  // Drop closures so intermediate buffers are released with the tape.
  for (auto& n : ops_) {
    n->backward = nullptr;
    n->inputs.clear();
  }
  ops_.clear();
}

}  // namespace punc::ad
