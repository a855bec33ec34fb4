#pragma once

#include "adaseg/tensor.hpp"

// Primitive tensor operations plus the composites assembled from them
// (softmax, layer norm, gelu, attention). Elementwise binaries accept equal
// shapes or one scalar operand; there is no other broadcasting — reshape or
// use the explicit expansion ops.
namespace adaseg::ag {

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor softplus(const Tensor& a);
// passthrough gradient inside [lo, hi], zero outside
Tensor clamp(const Tensor& a, double lo, double hi);

// linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);  // [n,k] @ [k,m]
Tensor transpose2(const Tensor& a);               // 2-D transpose

// 3x3 convolution family, zero padding 1, stride in {1,2}; closed under
// differentiation (each one's backward is expressed via the other two)
Tensor conv2d(const Tensor& x, const Tensor& w, int stride);
Tensor conv2d_input_grad(const Tensor& g, const Tensor& w, int stride, int h, int wdt);
Tensor conv2d_weight_grad(const Tensor& g, const Tensor& x, int stride);

Tensor upsample2x(const Tensor& x);  // [c,h,w] -> [c,2h,2w] nearest
Tensor sumpool2x(const Tensor& x);   // [c,h,w] -> [c,h/2,w/2], adjoint of upsample2x

// shape
Tensor reshape(const Tensor& x, Shape s);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor pad_zero(const Tensor& x, int axis, int before, int after);
Tensor concat(const std::vector<Tensor>& xs, int axis);

// reductions / expansions
Tensor rowsum(const Tensor& x);           // [..., k] -> [..., 1]
Tensor rowbcast(const Tensor& x, int k);  // [..., 1] -> [..., k]
Tensor colsum(const Tensor& x);           // [n, d] -> [d]
Tensor repeat_rows(const Tensor& x, int n);  // [d] -> [n, d]
Tensor sum_all(const Tensor& x);             // -> [1]
Tensor mean_all(const Tensor& x);
Tensor expand_scalar(const Tensor& s, Shape shape);

// gathers
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // [V,d] -> [n,d]
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& ids, int vocab);
Tensor take(const Tensor& x, const std::vector<std::int64_t>& flat_idx);  // -> [k]
Tensor put_at(const Tensor& vals, const std::vector<std::int64_t>& flat_idx, Shape shape);

// composites (differentiable to any order through the primitives above)
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [n,i]@[i,o] + b
// scaled dot-product attention over 2-D token matrices; optional additive
// mask constant (e.g. causal) applied to the score matrix
Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask = nullptr);

}  // namespace adaseg::ag
