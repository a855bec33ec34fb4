#include "adaseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "adaseg/ops.hpp"

namespace adaseg::ag {

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<bool> g_checked{false};
std::atomic<std::uint64_t> g_seq{1};
}  // namespace

std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

GradGuard::GradGuard(bool on) : prev_(g_grad_enabled) { g_grad_enabled = on; }
GradGuard::~GradGuard() { g_grad_enabled = prev_; }

void set_checked(bool on) { g_checked.store(on, std::memory_order_relaxed); }
bool checked() { return g_checked.load(std::memory_order_relaxed); }

Tensor Tensor::zeros(Shape s) { return full(std::move(s), 0.0); }

Tensor Tensor::full(Shape s, double v) {
  auto impl = std::make_shared<TensorImpl>();
  const auto n = numel_of(s);
  impl->shape = std::move(s);
  impl->data.assign(static_cast<std::size_t>(n), v);
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::from(Shape s, std::vector<double> values) {
  if (numel_of(s) != static_cast<std::int64_t>(values.size()))
    throw std::runtime_error("tensor: shape " + shape_str(s) + " does not match " +
                             std::to_string(values.size()) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(s);
  impl->data = std::move(values);
  return wrap(std::move(impl));
}

double Tensor::item() const {
  if (numel() != 1) throw std::runtime_error("item: tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl_->node) throw std::runtime_error("set_requires_grad: tensor is not a leaf");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return wrap(std::move(impl));
}

std::vector<double>& Tensor::leaf_data() {
  if (impl_->node) throw std::runtime_error("leaf_data: tensor is graph-produced");
  return impl_->data;
}

Tensor make_op(const char* op, Shape out_shape, std::vector<double> out_data,
               std::vector<Tensor> inputs, BackwardFn bw) {
  if (checked()) {
    for (double v : out_data)
      if (!std::isfinite(v))
        throw std::runtime_error(std::string("non-finite value produced by op ") + op);
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(out_shape);
  impl->data = std::move(out_data);
  if (numel_of(impl->shape) != static_cast<std::int64_t>(impl->data.size()))
    throw std::runtime_error(std::string("op ") + op + ": output shape/data mismatch");

  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs)
      if (t.requires_grad()) { needs = true; break; }

  if (needs) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
    node->out = impl.get();
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor::wrap(std::move(impl));
}

std::vector<Tensor> backward(const Tensor& output, const std::vector<Tensor>& wrt,
                             bool create_graph) {
  if (!output.defined() || output.numel() != 1)
    throw std::runtime_error("backward: output must be scalar");
  for (const auto& t : wrt)
    if (!t.requires_grad())
      throw std::runtime_error("backward: wrt tensor does not require grad");

  // reachable subgraph, then propagate in descending tape order
  std::vector<Node*> order;
  {
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack;
    if (output.impl()->node) {
      stack.push_back(output.impl()->node.get());
      seen.insert(stack.back());
    }
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& in : n->inputs) {
        Node* p = in.impl()->node.get();
        if (p && seen.insert(p).second) stack.push_back(p);
      }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
  }

  std::unordered_map<const TensorImpl*, Tensor> grads;
  grads.emplace(output.impl().get(), Tensor::scalar(1.0));

  {
    GradGuard guard(create_graph);
    for (Node* n : order) {
      auto it = grads.find(n->out);
      if (it == grads.end()) continue;
      Tensor gout = it->second;
      std::vector<Tensor> gin = n->backward(gout);
      if (gin.size() != n->inputs.size())
        throw std::runtime_error(std::string("op ") + n->op + ": backward arity mismatch");
      for (std::size_t i = 0; i < gin.size(); ++i) {
        const auto& in = n->inputs[i];
        if (!in.requires_grad()) continue;
        auto [slot, fresh] = grads.try_emplace(in.impl().get(), gin[i]);
        if (!fresh) slot->second = add(slot->second, gin[i]);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto it = grads.find(t.impl().get());
    if (it != grads.end()) {
      result.push_back(it->second);
    } else if (t.impl()->node) {
      // a graph-produced tensor the output does not depend on is a caller bug
      throw std::runtime_error("backward: wrt tensor unreachable from output");
    } else {
      // leaf that did not participate (e.g. only used through detach): zero grad
      result.push_back(Tensor::zeros(t.shape()));
    }
  }
  return result;
}

}  // namespace adaseg::ag
