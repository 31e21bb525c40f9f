#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mfvit::ad {

// Storage is always double. In f32 mode every op output and optimizer
// update is rounded to the nearest float, so values evolve exactly as they
// would in single precision storage; f64 mode is used for gradient checks.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

// Rounds in place according to the active precision.
void round_to_precision(std::span<double> values);

bool grad_enabled();

// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad();
};

// Reference-counted handle to a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  // Matrix view: rows = numel / last dim.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  // Direct write access; intended for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode pass from this tensor. A scalar is seeded with 1; a
  // non-scalar needs an explicit seed of the same size. Leaf gradients
  // accumulate across calls; intermediate gradients are reset.
  void backward() const;
  void backward(std::span<const double> seed) const;

  // New leaf sharing no graph history (values copied).
  Tensor detach() const;
  Tensor clone_leaf(bool requires_grad) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

}  // namespace mfvit::ad
