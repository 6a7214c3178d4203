#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmvs {

using Shape = std::vector<int64_t>;

std::string ShapeString(const Shape& shape);
int64_t NumElements(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Values are held in doubles. In kFloat32 mode every value written by an op
// or an optimizer is rounded to the nearest float, so tensors behave as
// 32-bit storage while reductions and gradients accumulate in 64 bits.
enum class Precision { kFloat32, kFloat64 };

Precision CurrentPrecision();
double StoreRounded(double v);

class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

bool GradEnabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// When enabled, every op output is scanned for NaN/Inf. On by default in
// debug builds.
bool FiniteCheckEnabled();
void SetFiniteCheck(bool enabled);

struct Node;

// Handle to a node of the dynamic computation graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(const Shape& shape);
  static Tensor Full(const Shape& shape, double value);
  static Tensor FromValues(const Shape& shape, std::vector<double> values);
  static Tensor Scalar(double value);
  // Leaf that accumulates gradients.
  static Tensor Parameter(const Shape& shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int i) const;
  int rank() const;
  int64_t numel() const;

  // The span views storage owned by this handle's node; not callable on
  // temporaries so it cannot outlive them in range-for loops.
  std::span<const double> values() const&;
  std::span<const double> values() const&& = delete;
  // Direct write access; only meaningful for leaves and freshly built
  // tensors that no graph depends on yet.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  void ZeroGrad();

  // Copy of the values with no history.
  Tensor Detach() const;
  Tensor Reshape(const Shape& shape) const;

  // Reverse pass from a scalar. Leaf gradients accumulate; the interior of
  // the graph is released afterwards.
  void Backward();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor MakeResult(Shape, std::vector<double>, std::vector<Tensor>,
                           std::function<void(const Node&)>);
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;

  std::vector<double>& EnsureGrad();
};

// Builds an op output. The values are rounded to the current precision. The
// backward closure is kept only when grad mode is on and some input requires
// a gradient.
Tensor MakeResult(Shape shape, std::vector<double> values,
                  std::vector<Tensor> inputs,
                  std::function<void(const Node&)> backward);

// Gradient buffer of an input, allocated on demand; nullptr when the input
// does not take part in differentiation.
double* GradOf(const Tensor& t);

}  // namespace mmvs
