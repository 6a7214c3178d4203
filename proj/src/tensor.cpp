#include "mmvs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace mmvs {

namespace {

thread_local Precision g_precision = Precision::kFloat32;
thread_local bool g_grad_enabled = true;
#ifdef NDEBUG
bool g_finite_check = false;
#else
bool g_finite_check = true;
#endif

#ifdef __GLIBC__
// Graph buffers of a few MB are allocated and freed on every step; keep them
// on the heap instead of fresh mmap pages that must be faulted in again.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

}  // namespace

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative dimension in " + ShapeString(shape));
    n *= d;
  }
  return n;
}

Precision CurrentPrecision() { return g_precision; }

double StoreRounded(double v) {
  return g_precision == Precision::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

PrecisionGuard::PrecisionGuard(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionGuard::~PrecisionGuard() { g_precision = saved_; }

bool GradEnabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool FiniteCheckEnabled() { return g_finite_check; }
void SetFiniteCheck(bool enabled) { g_finite_check = enabled; }

std::vector<double>& Node::EnsureGrad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::Zeros(const Shape& shape) { return Full(shape, 0.0); }

Tensor Tensor::Full(const Shape& shape, double value) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value.assign(NumElements(shape), StoreRounded(value));
  return Tensor(std::move(node));
}

Tensor Tensor::FromValues(const Shape& shape, std::vector<double> values) {
  if (static_cast<int64_t>(values.size()) != NumElements(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + ShapeString(shape));
  }
  for (double& v : values) v = StoreRounded(v);
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::Scalar(double value) { return FromValues({}, {value}); }

Tensor Tensor::Parameter(const Shape& shape, std::vector<double> values) {
  Tensor t = FromValues(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw DimensionError("dim index out of range for " + ShapeString(shape()));
  return node_->shape[i];
}

int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->value.size()); }
std::span<const double> Tensor::values() const& { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + ShapeString(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw DimensionError("index rank mismatch for " + ShapeString(shape()));
  }
  int64_t offset = 0;
  int i = 0;
  for (int64_t ix : index) {
    if (ix < 0 || ix >= node_->shape[i]) throw DimensionError("index out of range");
    offset = offset * node_->shape[i] + ix;
    ++i;
  }
  return node_->value[offset];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const& { return node_->grad; }

void Tensor::ZeroGrad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::Detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::Reshape(const Shape& new_shape) const {
  if (NumElements(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + ShapeString(shape()) + " to " + ShapeString(new_shape));
  }
  Tensor self = *this;
  return MakeResult(new_shape, node_->value, {self}, [self](const Node& out) {
    double* g = GradOf(self);
    for (size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
  });
}

void Tensor::Backward() {
  if (numel() != 1) throw DimensionError("Backward() requires a scalar, got " + ShapeString(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->EnsureGrad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->is_leaf) {
      n->backward = nullptr;
      n->parents.clear();
      if (n != node_.get()) n->grad.clear();
    }
  }
}

Tensor MakeResult(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                  std::function<void(const Node&)> backward) {
  if (static_cast<int64_t>(values.size()) != NumElements(shape)) {
    throw DimensionError("op produced " + std::to_string(values.size()) +
                         " values for shape " + ShapeString(shape));
  }
  if (g_precision == Precision::kFloat32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
  if (g_finite_check) {
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericalError("non-finite value in op output " + ShapeString(shape));
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool needs = false;
  if (g_grad_enabled && backward) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) node->parents.push_back(t.shared_node());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

double* GradOf(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node()->EnsureGrad().data();
}

}  // namespace mmvs
