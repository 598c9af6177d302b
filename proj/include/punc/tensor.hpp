#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace punc::ad {

// Rank 1 ({n}) or rank 2 ({rows, cols}). A rank-1 tensor behaves as a
// single row in matrix operations.
using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tape;

struct Node {
  Shape shape;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  const Tape* tape = nullptr;  // producing tape; null for leaves
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }
  std::vector<double>& ensure_grad();
};

// Shared handle to a node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * node_->cols + c];
  }
  double item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when the gradient was never populated.
  std::vector<double> grad() const;
  double grad_at(std::size_t i) const {
    return node_->grad.empty() ? 0.0 : node_->grad[i];
  }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Records operations in topological order and replays their backward rules
// once. A tape created with record = false only evaluates.
class Tape {
 public:
  explicit Tape(std::uint64_t seed = 0, bool record = true);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return ops_.size(); }
  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }

  void record(std::shared_ptr<Node> node);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  // Gradients accumulate into leaves that require them.
  void backward(const Tensor& loss);

 private:
  std::vector<std::shared_ptr<Node>> ops_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  bool record_;
  bool consumed_ = false;
};

}  // namespace punc::ad
