#include "mlp3d/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "mlp3d/errors.hpp"

namespace mlp3d {

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw ParameterError("unknown precision '" + name + "' (expected f32 or f64)");
}

template <class Real>
Real* Tensor<Real>::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Real(0));
  return grad.data();
}

template <class Real>
Tensor<Real>::Tensor() : node_(std::make_shared<Node>()) {
  node_->shape = {1};
  node_->data = {Real(0)};
}

template <class Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape) {
  return full(std::move(shape), Real(0));
}

template <class Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value));
}

template <class Real>
Tensor<Real> Tensor<Real>::from(Shape shape, std::vector<Real> values) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape.empty()) shape = {1};
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return Tensor(std::move(node));
}

template <class Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
  return from({1}, {value});
}

template <class Real>
Tensor<Real> Tensor<Real>::make_result(Shape shape, std::vector<Real> values,
                                       const std::vector<Tensor>& parents, BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values));
  if (!t_grad_enabled) return out;
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const Tensor& p) { return p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (const auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <class Real>
std::size_t Tensor<Real>::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <class Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

template <class Real>
std::span<Real> Tensor<Real>::mutable_grad() {
  node_->grad_buffer();
  return node_->grad;
}

template <class Real>
void Tensor<Real>::zero_grad() {
  node_->grad.clear();
}

template <class Real>
Tensor<Real>& Tensor<Real>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <class Real>
void Tensor<Real>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() needs a single-element loss, got shape " +
                         shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <class Real>
Tensor<Real> Tensor<Real>::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

template <class Real>
Tensor<Real> Tensor<Real>::clone() const {
  return detach();
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mlp3d
