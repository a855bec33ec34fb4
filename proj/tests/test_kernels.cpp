#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "adaseg/kernels.hpp"
#include "adaseg/rng.hpp"

using adaseg::Rng;
namespace k = adaseg::kernels;

namespace {
std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
}  // namespace

TEST_CASE("conv_out_dim") {
  CHECK(k::conv_out_dim(64, 1) == 64);
  CHECK(k::conv_out_dim(64, 2) == 32);
  CHECK(k::conv_out_dim(5, 2) == 3);
  CHECK(k::conv_out_dim(1, 2) == 1);
}

TEST_CASE("matmul omp bit-identical to serial") {
  Rng rng(11);
  for (auto [n, kk, m] : {std::tuple{1, 1, 1}, {3, 7, 5}, {17, 33, 9}, {64, 48, 32}}) {
    auto a = random_vec(static_cast<std::size_t>(n) * kk, rng);
    auto b = random_vec(static_cast<std::size_t>(kk) * m, rng);
    std::vector<double> c1(static_cast<std::size_t>(n) * m), c2(c1.size());
    k::matmul_serial(a.data(), b.data(), c1.data(), n, kk, m);
    k::matmul_omp(a.data(), b.data(), c2.data(), n, kk, m);
    CHECK(bit_equal(c1, c2));
  }
}

TEST_CASE("conv2d family omp bit-identical to serial") {
  Rng rng(12);
  for (int stride : {1, 2}) {
    for (auto [cin, h, w, cout] : {std::tuple{1, 4, 4, 1}, {3, 9, 7, 5}, {8, 16, 16, 4}}) {
      const int oh = k::conv_out_dim(h, stride), ow = k::conv_out_dim(w, stride);
      auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
      auto wt = random_vec(static_cast<std::size_t>(cout) * cin * 9, rng);
      auto g = random_vec(static_cast<std::size_t>(cout) * oh * ow, rng);

      std::vector<double> y1(g.size()), y2(g.size());
      k::conv2d_serial(x.data(), wt.data(), y1.data(), cin, h, w, cout, stride);
      k::conv2d_omp(x.data(), wt.data(), y2.data(), cin, h, w, cout, stride);
      CHECK(bit_equal(y1, y2));

      std::vector<double> gx1(x.size()), gx2(x.size());
      k::conv2d_input_grad_serial(g.data(), wt.data(), gx1.data(), cin, h, w, cout, stride);
      k::conv2d_input_grad_omp(g.data(), wt.data(), gx2.data(), cin, h, w, cout, stride);
      CHECK(bit_equal(gx1, gx2));

      std::vector<double> gw1(wt.size()), gw2(wt.size());
      k::conv2d_weight_grad_serial(g.data(), x.data(), gw1.data(), cin, h, w, cout, stride);
      k::conv2d_weight_grad_omp(g.data(), x.data(), gw2.data(), cin, h, w, cout, stride);
      CHECK(bit_equal(gw1, gw2));
    }
  }
}

TEST_CASE("conv2d input grad is the adjoint of conv2d") {
  // <conv(x), g> == <x, conv_input_grad(g)> for random x, g
  Rng rng(13);
  for (int stride : {1, 2}) {
    const int cin = 2, h = 6, w = 5, cout = 3;
    const int oh = k::conv_out_dim(h, stride), ow = k::conv_out_dim(w, stride);
    auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
    auto wt = random_vec(static_cast<std::size_t>(cout) * cin * 9, rng);
    auto g = random_vec(static_cast<std::size_t>(cout) * oh * ow, rng);
    std::vector<double> y(g.size()), gx(x.size());
    k::conv2d_serial(x.data(), wt.data(), y.data(), cin, h, w, cout, stride);
    k::conv2d_input_grad_serial(g.data(), wt.data(), gx.data(), cin, h, w, cout, stride);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("upsample2x then sumpool2x recovers 4x input") {
  Rng rng(14);
  const int c = 2, h = 3, w = 4;
  auto x = random_vec(static_cast<std::size_t>(c) * h * w, rng);
  std::vector<double> up(static_cast<std::size_t>(c) * 4 * h * w), back(x.size());
  k::upsample2x(x.data(), up.data(), c, h, w);
  k::sumpool2x(up.data(), back.data(), c, 2 * h, 2 * w);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(4.0 * x[i]));
}

TEST_CASE("backend dispatch is switchable") {
  auto prev = k::backend();
  k::set_backend(k::Backend::Serial);
  CHECK(k::backend() == k::Backend::Serial);
  k::set_backend(k::Backend::OpenMP);
  CHECK(k::backend() == k::Backend::OpenMP);
  k::set_backend(prev);
}
