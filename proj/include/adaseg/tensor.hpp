#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Reverse-mode autodiff over dense 64-bit tensors. Every primitive's backward
// rule is written in terms of the primitives themselves, so running backward()
// with create_graph=true yields gradients that are ordinary graph tensors and
// can be differentiated again (gradients of gradients).
namespace adaseg::ag {

using Shape = std::vector<int>;

std::int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
struct TensorImpl;

// grad for each input, aligned with the node's input list
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

struct Node {
  const char* op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  const TensorImpl* out = nullptr;  // producer's output; impl owns this node
  std::uint64_t seq = 0;            // monotone append order, topo order of the tape
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves and constants
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;
  double at(std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  // leaf-only toggle; a graph-produced tensor keeps its recorded status
  Tensor& set_requires_grad(bool on);

  // same values, no graph linkage
  Tensor detach() const;

  // mutating view of leaf storage (parameter updates by the optimizer);
  // refuses tensors that sit on the graph
  std::vector<double>& leaf_data();

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Thread-local recording mode (on by default).
bool grad_enabled();

class GradGuard {
 public:
  explicit GradGuard(bool on);
  ~GradGuard();
  GradGuard(const GradGuard&) = delete;
  GradGuard& operator=(const GradGuard&) = delete;

 private:
  bool prev_;
};

// Checked mode: scan every op output for NaN/Inf and throw.
void set_checked(bool on);
bool checked();

// Record one primitive application on the tape. The backward closure must
// return one gradient per input, each built from primitives so higher-order
// differentiation composes.
Tensor make_op(const char* op, Shape out_shape, std::vector<double> out_data,
               std::vector<Tensor> inputs, BackwardFn bw);

// d(output)/d(wrt) for a scalar output. With create_graph=true the returned
// gradients are themselves recorded and differentiable. wrt entries must have
// requires_grad=true; entries the output does not depend on get zeros.
std::vector<Tensor> backward(const Tensor& output, const std::vector<Tensor>& wrt,
                             bool create_graph = false);

}  // namespace adaseg::ag
