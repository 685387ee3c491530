#pragma once

// Dense row-major tensor with tape-free reverse-mode differentiation.
//
// Every Tensor is a handle onto a shared node. Nodes produced by
// differentiable ops keep their parents alive and carry a closure that
// pushes the node's gradient into the parents. Calling backward() on a
// scalar walks the graph in reverse topological order.
//
// Values are immutable once an op has produced them. Leaf tensors
// (parameters) are mutated in place only by optimizers and initializers,
// through mutable_data().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mlp3d {

using Shape = std::vector<std::size_t>;

enum class Precision { f32, f64 };

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);
std::string precision_name(Precision p);
Precision parse_precision(const std::string& name);

template <class Real>
struct PrecisionOf;
template <>
struct PrecisionOf<float> {
  static constexpr Precision value = Precision::f32;
};
template <>
struct PrecisionOf<double> {
  static constexpr Precision value = Precision::f64;
};

// While alive, ops on this thread do not record graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <class Real>
class Tensor {
 public:
  using value_type = Real;

  struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    // Lazily allocates a zeroed gradient buffer.
    Real* grad_buffer();
  };
  using NodePtr = std::shared_ptr<Node>;
  using BackwardFn = std::function<void(Node&)>;

  // A rank-0-like scalar holding 0.
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor from(Shape shape, std::vector<Real> values);
  static Tensor scalar(Real value);

  // Builds an op result. If grad recording is on and any parent requires
  // grad, the node records its parents and backward closure.
  static Tensor make_result(Shape shape, std::vector<Real> values,
                            const std::vector<Tensor>& parents,
                            BackwardFn backward);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Extent of axis i; negative i counts from the back.
  std::size_t dim(int axis) const;

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  // A copy, so it is safe to call on temporaries.
  std::vector<Real> values() const { return node_->data; }
  Real at(std::size_t flat_index) const { return node_->data.at(flat_index); }
  Real item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad();
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  // Reverse-mode pass from a single-element tensor. Gradients accumulate
  // into every reachable node that requires grad.
  void backward() const;

  // Same values, no history, no grad requirement.
  Tensor detach() const;
  // Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  bool is_same(const Tensor& other) const { return node_ == other.node_; }
  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

// A parameter together with its canonical path, e.g.
// "stage2.block1.mixing.t_weights.w_+1".
template <class Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mlp3d
