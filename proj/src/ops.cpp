#include "adaseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "adaseg/kernels.hpp"

namespace adaseg::ag {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::runtime_error(std::string("op ") + op + ": shape mismatch " + shape_str(a) +
                           " vs " + shape_str(b));
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

// elementwise binary with scalar-tensor broadcast; f(a_i, b_i) plus the two
// partial-derivative builders
template <class F>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, BackwardFn bw) {
  const bool as = is_scalar(a), bs = is_scalar(b);
  if (!as && !bs && a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  const Shape& out_shape = as ? b.shape() : a.shape();
  const auto n = std::max(a.numel(), b.numel());
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = f(da[as ? 0 : i], db[bs ? 0 : i]);
  return make_op(op, out_shape, std::move(out), {a, b}, std::move(bw));
}

// reduce an elementwise gradient back to a scalar operand's shape when the
// forward broadcast it
Tensor reduce_for(const Tensor& operand, const Tensor& g) {
  if (operand.numel() == g.numel()) return g;
  return sum_all(g);
}

template <class F>
Tensor unary_from_data(const char* op, const Tensor& a, F f, BackwardFn bw) {
  std::vector<double> out(a.data().size());
  const auto& d = a.data();
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = f(d[i]);
  return make_op(op, a.shape(), std::move(out), {a}, std::move(bw));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        return {reduce_for(a, g), reduce_for(b, g)};
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        return {reduce_for(a, g), reduce_for(b, neg(g))};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        return {reduce_for(a, mul(g, b)), reduce_for(b, mul(g, a))};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [a, b](const Tensor& g) -> std::vector<Tensor> {
        Tensor ga = div(g, b);
        Tensor gb = neg(mul(ga, div(a, b)));  // -g * a / b^2
        return {reduce_for(a, ga), reduce_for(b, gb)};
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_from_data(
      "add_scalar", a, [c](double x) { return x + c; },
      [](const Tensor& g) -> std::vector<Tensor> { return {g}; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_from_data(
      "mul_scalar", a, [c](double x) { return x * c; },
      [c](const Tensor& g) -> std::vector<Tensor> { return {mul_scalar(g, c)}; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  std::vector<double> mask(a.data().size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = a.data()[i] > 0.0 ? 1.0 : 0.0;
  Tensor mask_t = Tensor::from(a.shape(), std::move(mask));
  return unary_from_data(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [mask_t](const Tensor& g) -> std::vector<Tensor> { return {mul(g, mask_t)}; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> mask(a.data().size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double x = a.data()[i];
    mask[i] = (x > lo && x < hi) ? 1.0 : 0.0;
  }
  Tensor mask_t = Tensor::from(a.shape(), std::move(mask));
  return unary_from_data(
      "clamp", a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [mask_t](const Tensor& g) -> std::vector<Tensor> { return {mul(g, mask_t)}; });
}

// The closures below recompute the forward value from the captured input
// rather than capturing the output tensor: capturing the output inside its
// own node would form a shared_ptr cycle, and a detached copy would cut the
// second-order path.

Tensor sigmoid(const Tensor& a) {
  return unary_from_data(
      "sigmoid", a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [a](const Tensor& g) -> std::vector<Tensor> {
        Tensor s = sigmoid(a);
        return {mul(g, mul(s, add_scalar(neg(s), 1.0)))};
      });
}

Tensor tanh(const Tensor& a) {
  return unary_from_data(
      "tanh", a, [](double x) { return std::tanh(x); },
      [a](const Tensor& g) -> std::vector<Tensor> {
        Tensor t = tanh(a);
        return {mul(g, add_scalar(neg(mul(t, t)), 1.0))};
      });
}

Tensor exp(const Tensor& a) {
  return unary_from_data(
      "exp", a, [](double x) { return std::exp(x); },
      [a](const Tensor& g) -> std::vector<Tensor> { return {mul(g, exp(a))}; });
}

Tensor log(const Tensor& a) {
  return unary_from_data(
      "log", a, [](double x) { return std::log(x); },
      [a](const Tensor& g) -> std::vector<Tensor> { return {div(g, a)}; });
}

Tensor sqrt(const Tensor& a) {
  return unary_from_data(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [a](const Tensor& g) -> std::vector<Tensor> {
        return {div(g, mul_scalar(sqrt(a), 2.0))};
      });
}

Tensor softplus(const Tensor& a) {
  return unary_from_data(
      "softplus", a,
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [a](const Tensor& g) -> std::vector<Tensor> { return {mul(g, sigmoid(a))}; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    shape_error("matmul", a.shape(), b.shape());
  const int n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), n, k, m);
  return make_op("matmul", {n, m}, std::move(out), {a, b},
                 [a, b](const Tensor& g) -> std::vector<Tensor> {
                   return {matmul(g, transpose2(b)), matmul(transpose2(a), g)};
                 });
}

Tensor transpose2(const Tensor& a) {
  if (a.shape().size() != 2) throw std::runtime_error("op transpose2: needs 2-D, got " + shape_str(a.shape()));
  const int n = a.shape()[0], m = a.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j) * n + i] = a.data()[static_cast<std::size_t>(i) * m + j];
  return make_op("transpose2", {m, n}, std::move(out), {a},
                 [](const Tensor& g) -> std::vector<Tensor> { return {transpose2(g)}; });
}

namespace {
void check_conv_args(const char* op, const Shape& x, const Shape& w, int stride) {
  if (x.size() != 3 || w.size() != 4 || w[2] != 3 || w[3] != 3 || x[0] != w[1])
    shape_error(op, x, w);
  if (stride != 1 && stride != 2)
    throw std::runtime_error(std::string("op ") + op + ": stride must be 1 or 2");
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride) {
  check_conv_args("conv2d", x.shape(), w.shape(), stride);
  const int cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2], cout = w.shape()[0];
  const int oh = kernels::conv_out_dim(h, stride), ow = kernels::conv_out_dim(wd, stride);
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow);
  kernels::conv2d(x.data().data(), w.data().data(), out.data(), cin, h, wd, cout, stride);
  return make_op("conv2d", {cout, oh, ow}, std::move(out), {x, w},
                 [x, w, stride, h, wd](const Tensor& g) -> std::vector<Tensor> {
                   return {conv2d_input_grad(g, w, stride, h, wd),
                           conv2d_weight_grad(g, x, stride)};
                 });
}

Tensor conv2d_input_grad(const Tensor& g, const Tensor& w, int stride, int h, int wdt) {
  if (g.shape().size() != 3 || w.shape().size() != 4 || g.shape()[0] != w.shape()[0])
    shape_error("conv2d_input_grad", g.shape(), w.shape());
  const int cout = w.shape()[0], cin = w.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(cin) * h * wdt);
  kernels::conv2d_input_grad(g.data().data(), w.data().data(), out.data(), cin, h, wdt, cout,
                             stride);
  return make_op("conv2d_input_grad", {cin, h, wdt}, std::move(out), {g, w},
                 [g, w, stride](const Tensor& u) -> std::vector<Tensor> {
                   return {conv2d(u, w, stride), conv2d_weight_grad(g, u, stride)};
                 });
}

Tensor conv2d_weight_grad(const Tensor& g, const Tensor& x, int stride) {
  if (g.shape().size() != 3 || x.shape().size() != 3)
    shape_error("conv2d_weight_grad", g.shape(), x.shape());
  const int cout = g.shape()[0], cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(cout) * cin * 9);
  kernels::conv2d_weight_grad(g.data().data(), x.data().data(), out.data(), cin, h, wd, cout,
                              stride);
  return make_op("conv2d_weight_grad", {cout, cin, 3, 3}, std::move(out), {g, x},
                 [g, x, stride, h, wd](const Tensor& v) -> std::vector<Tensor> {
                   return {conv2d(x, v, stride), conv2d_input_grad(g, v, stride, h, wd)};
                 });
}

Tensor upsample2x(const Tensor& x) {
  if (x.shape().size() != 3) throw std::runtime_error("op upsample2x: needs [c,h,w], got " + shape_str(x.shape()));
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(c) * 4 * h * w);
  kernels::upsample2x(x.data().data(), out.data(), c, h, w);
  return make_op("upsample2x", {c, 2 * h, 2 * w}, std::move(out), {x},
                 [](const Tensor& g) -> std::vector<Tensor> { return {sumpool2x(g)}; });
}

Tensor sumpool2x(const Tensor& x) {
  if (x.shape().size() != 3 || x.shape()[1] % 2 || x.shape()[2] % 2)
    throw std::runtime_error("op sumpool2x: needs even [c,h,w], got " + shape_str(x.shape()));
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(c) * (h / 2) * (w / 2));
  kernels::sumpool2x(x.data().data(), out.data(), c, h, w);
  return make_op("sumpool2x", {c, h / 2, w / 2}, std::move(out), {x},
                 [](const Tensor& g) -> std::vector<Tensor> { return {upsample2x(g)}; });
}

Tensor reshape(const Tensor& x, Shape s) {
  if (numel_of(s) != x.numel()) shape_error("reshape", x.shape(), s);
  Shape orig = x.shape();
  return make_op("reshape", std::move(s), x.data(), {x},
                 [orig](const Tensor& g) -> std::vector<Tensor> { return {reshape(g, orig)}; });
}

namespace {
// treat tensor as [outer, dim, inner] around `axis`
struct AxisView {
  std::int64_t outer = 1, dim = 1, inner = 1;
};
AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  v.dim = s[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}
}  // namespace

Tensor slice(const Tensor& x, int axis, int start, int len) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 ||
      start + len > s[static_cast<std::size_t>(axis)])
    throw std::runtime_error("op slice: bad range on shape " + shape_str(s));
  const auto v = axis_view(s, axis);
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::vector<double> out(static_cast<std::size_t>(v.outer) * len * v.inner);
  const auto& d = x.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t j = 0; j < len; ++j)
      std::memcpy(out.data() + (o * len + j) * v.inner,
                  d.data() + (o * v.dim + start + j) * v.inner,
                  static_cast<std::size_t>(v.inner) * sizeof(double));
  const int after = s[static_cast<std::size_t>(axis)] - start - len;
  return make_op("slice", std::move(out_shape), std::move(out), {x},
                 [axis, start, after](const Tensor& g) -> std::vector<Tensor> {
                   return {pad_zero(g, axis, start, after)};
                 });
}

Tensor pad_zero(const Tensor& x, int axis, int before, int after) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || before < 0 || after < 0)
    throw std::runtime_error("op pad_zero: bad range on shape " + shape_str(s));
  const auto v = axis_view(s, axis);
  const int dim = s[static_cast<std::size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = dim + before + after;
  std::vector<double> out(static_cast<std::size_t>(v.outer) * (dim + before + after) * v.inner, 0.0);
  const auto& d = x.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    std::memcpy(out.data() + (o * (dim + before + after) + before) * v.inner,
                d.data() + o * v.dim * v.inner,
                static_cast<std::size_t>(v.dim) * v.inner * sizeof(double));
  const int len = dim;
  return make_op("pad_zero", std::move(out_shape), std::move(out), {x},
                 [axis, before, len](const Tensor& g) -> std::vector<Tensor> {
                   return {slice(g, axis, before, len)};
                 });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::runtime_error("op concat: empty input list");
  const Shape& s0 = xs[0].shape();
  int total = 0;
  for (const auto& t : xs) {
    if (t.shape().size() != s0.size()) shape_error("concat", t.shape(), s0);
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (static_cast<int>(i) != axis && t.shape()[i] != s0[i]) shape_error("concat", t.shape(), s0);
    total += t.shape()[static_cast<std::size_t>(axis)];
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = total;
  const auto v = axis_view(out_shape, axis);
  std::vector<double> out(static_cast<std::size_t>(v.outer) * v.dim * v.inner);
  std::int64_t offset = 0;
  for (const auto& t : xs) {
    const std::int64_t dim = t.shape()[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < v.outer; ++o)
      std::memcpy(out.data() + (o * v.dim + offset) * v.inner,
                  t.data().data() + o * dim * v.inner,
                  static_cast<std::size_t>(dim) * v.inner * sizeof(double));
    offset += dim;
  }
  std::vector<int> dims;
  for (const auto& t : xs) dims.push_back(t.shape()[static_cast<std::size_t>(axis)]);
  return make_op("concat", std::move(out_shape), std::move(out), xs,
                 [axis, dims](const Tensor& g) -> std::vector<Tensor> {
                   std::vector<Tensor> parts;
                   int at = 0;
                   for (int d : dims) {
                     parts.push_back(slice(g, axis, at, d));
                     at += d;
                   }
                   return parts;
                 });
}

Tensor rowsum(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw std::runtime_error("op rowsum: needs at least 1-D");
  const int k = s.back();
  const std::int64_t rows = x.numel() / k;
  Shape out_shape = s;
  out_shape.back() = 1;
  std::vector<double> out(static_cast<std::size_t>(rows));
  const auto& d = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += d[r * k + j];
    out[r] = acc;
  }
  return make_op("rowsum", std::move(out_shape), std::move(out), {x},
                 [k](const Tensor& g) -> std::vector<Tensor> { return {rowbcast(g, k)}; });
}

Tensor rowbcast(const Tensor& x, int k) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() != 1)
    throw std::runtime_error("op rowbcast: last dim must be 1, got " + shape_str(s));
  const std::int64_t rows = x.numel();
  Shape out_shape = s;
  out_shape.back() = k;
  std::vector<double> out(static_cast<std::size_t>(rows) * k);
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < k; ++j) out[r * k + j] = x.data()[r];
  return make_op("rowbcast", std::move(out_shape), std::move(out), {x},
                 [](const Tensor& g) -> std::vector<Tensor> { return {rowsum(g)}; });
}

Tensor colsum(const Tensor& x) {
  if (x.shape().size() != 2) throw std::runtime_error("op colsum: needs 2-D, got " + shape_str(x.shape()));
  const int n = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += x.data()[static_cast<std::size_t>(i) * d + j];
  return make_op("colsum", {d}, std::move(out), {x},
                 [n](const Tensor& g) -> std::vector<Tensor> { return {repeat_rows(g, n)}; });
}

Tensor repeat_rows(const Tensor& x, int n) {
  if (x.shape().size() != 1) throw std::runtime_error("op repeat_rows: needs 1-D, got " + shape_str(x.shape()));
  const int d = x.shape()[0];
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::memcpy(out.data() + static_cast<std::size_t>(i) * d, x.data().data(), d * sizeof(double));
  return make_op("repeat_rows", {n, d}, std::move(out), {x},
                 [](const Tensor& g) -> std::vector<Tensor> { return {colsum(g)}; });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Shape orig = x.shape();
  return make_op("sum_all", {1}, {acc}, {x},
                 [orig](const Tensor& g) -> std::vector<Tensor> {
                   return {expand_scalar(g, orig)};
                 });
}

Tensor mean_all(const Tensor& x) { return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor expand_scalar(const Tensor& s, Shape shape) {
  if (s.numel() != 1) throw std::runtime_error("op expand_scalar: source must be scalar");
  const auto n = numel_of(shape);
  std::vector<double> out(static_cast<std::size_t>(n), s.data()[0]);
  return make_op("expand_scalar", std::move(shape), std::move(out), {s},
                 [](const Tensor& g) -> std::vector<Tensor> { return {sum_all(g)}; });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) throw std::runtime_error("op embedding: table must be 2-D");
  const int v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw std::runtime_error("op embedding: id out of range");
    std::memcpy(out.data() + i * d, table.data().data() + static_cast<std::size_t>(ids[i]) * d,
                d * sizeof(double));
  }
  std::vector<int> ids_copy = ids;
  return make_op("embedding", {static_cast<int>(ids.size()), d}, std::move(out), {table},
                 [ids_copy, v](const Tensor& g) -> std::vector<Tensor> {
                   return {scatter_rows(g, ids_copy, v)};
                 });
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& ids, int vocab) {
  if (rows.shape().size() != 2 || rows.shape()[0] != static_cast<int>(ids.size()))
    throw std::runtime_error("op scatter_rows: rows/ids mismatch");
  const int d = rows.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(vocab) * d, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(ids[i]) * d + j] += rows.data()[i * d + j];
  std::vector<int> ids_copy = ids;
  return make_op("scatter_rows", {vocab, d}, std::move(out), {rows},
                 [ids_copy](const Tensor& g) -> std::vector<Tensor> {
                   return {embedding(g, ids_copy)};
                 });
}

Tensor take(const Tensor& x, const std::vector<std::int64_t>& flat_idx) {
  std::vector<double> out(flat_idx.size());
  for (std::size_t i = 0; i < flat_idx.size(); ++i) {
    if (flat_idx[i] < 0 || flat_idx[i] >= x.numel())
      throw std::runtime_error("op take: index out of range");
    out[i] = x.data()[static_cast<std::size_t>(flat_idx[i])];
  }
  Shape orig = x.shape();
  std::vector<std::int64_t> idx = flat_idx;
  return make_op("take", {static_cast<int>(flat_idx.size())}, std::move(out), {x},
                 [idx, orig](const Tensor& g) -> std::vector<Tensor> {
                   return {put_at(g, idx, orig)};
                 });
}

Tensor put_at(const Tensor& vals, const std::vector<std::int64_t>& flat_idx, Shape shape) {
  if (vals.numel() != static_cast<std::int64_t>(flat_idx.size()))
    throw std::runtime_error("op put_at: vals/idx mismatch");
  std::vector<double> out(static_cast<std::size_t>(numel_of(shape)), 0.0);
  for (std::size_t i = 0; i < flat_idx.size(); ++i)
    out[static_cast<std::size_t>(flat_idx[i])] += vals.data()[i];
  std::vector<std::int64_t> idx = flat_idx;
  return make_op("put_at", std::move(shape), std::move(out), {vals},
                 [idx](const Tensor& g) -> std::vector<Tensor> { return {take(g, idx)}; });
}

// --- composites ---

namespace {
// per-row max as a detached constant; the shift cancels in softmax exactly,
// so treating it as constant is not an approximation
Tensor rowmax_const(const Tensor& x) {
  const int k = x.shape().back();
  const std::int64_t rows = x.numel() / k;
  Shape s = x.shape();
  s.back() = 1;
  std::vector<double> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = x.data()[r * k];
    for (int j = 1; j < k; ++j) m = std::max(m, x.data()[r * k + j]);
    out[r] = m;
  }
  return Tensor::from(std::move(s), std::move(out));
}
}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
  const int k = x.shape().back();
  Tensor shifted = sub(x, rowbcast(rowmax_const(x), k));
  Tensor e = exp(shifted);
  return div(e, rowbcast(rowsum(e), k));
}

Tensor log_softmax_lastdim(const Tensor& x) {
  const int k = x.shape().back();
  Tensor shifted = sub(x, rowbcast(rowmax_const(x), k));
  return sub(shifted, rowbcast(log(rowsum(exp(shifted))), k));
}

Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.shape().size() != 2 || gamma.shape().size() != 1 || gamma.shape()[0] != x.shape()[1] ||
      beta.shape() != gamma.shape())
    shape_error("layer_norm", x.shape(), gamma.shape());
  const int n = x.shape()[0], d = x.shape()[1];
  Tensor mu = mul_scalar(rowsum(x), 1.0 / d);
  Tensor centered = sub(x, rowbcast(mu, d));
  Tensor var = mul_scalar(rowsum(mul(centered, centered)), 1.0 / d);
  Tensor denom = rowbcast(sqrt(add_scalar(var, eps)), d);
  Tensor normed = div(centered, denom);
  return add(mul(normed, repeat_rows(gamma, n)), repeat_rows(beta, n));
}

Tensor gelu(const Tensor& x) {
  // tanh approximation; composes from primitives so all orders differentiate
  constexpr double kSqrt2OverPi = 0.79788456080286535588;
  Tensor x3 = mul(mul(x, x), x);
  Tensor inner = mul_scalar(add(x, mul_scalar(x3, 0.044715)), kSqrt2OverPi);
  return mul(mul_scalar(x, 0.5), add_scalar(tanh(inner), 1.0));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return add(y, repeat_rows(b, y.shape()[0]));
}

Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask) {
  const int dk = q.shape()[1];
  Tensor scores = mul_scalar(matmul(q, transpose2(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  if (mask) scores = add(scores, *mask);
  return matmul(softmax_lastdim(scores), v);
}

}  // namespace adaseg::ag
