#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "adaseg/ops.hpp"
#include "adaseg/rng.hpp"
#include "adaseg/tensor.hpp"
#include "gradcheck.hpp"

using adaseg::Rng;
using adaseg::ag::Shape;
using adaseg::ag::Tensor;
namespace ag = adaseg::ag;

TEST_CASE("matmul against identity") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor out = ag::matmul(a, eye);
  CHECK(out.data() == a.data());
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor x = Tensor::from({2}, {0.0, 0.0});
  Tensor s = ag::softmax_lastdim(ag::reshape(x, {1, 2}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));
}

TEST_CASE("conv2d all-ones center element equals receptive-field sum") {
  // direct-summation oracle over the 3x3 receptive field
  Tensor img = Tensor::full({1, 3, 3}, 1.0);
  Tensor ker = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor out = ag::conv2d(img, ker, 1);
  double expect = 0.0;
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) {
      const int iy = 1 + ky - 1, ix = 1 + kx - 1;
      if (iy >= 0 && iy < 3 && ix >= 0 && ix < 3) expect += 1.0;
    }
  CHECK(expect == 9.0);
  CHECK(out.at(1 * 3 + 1) == doctest::Approx(expect));
  // corner touches only 4 in-bounds cells
  CHECK(out.at(0) == doctest::Approx(4.0));
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  auto g = ag::backward(ag::mul(x, x), {x});
  CHECK(g[0].item() == doctest::Approx(6.0));
}

TEST_CASE("second derivative of x^3 at 2 is 12") {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  Tensor y = ag::mul(ag::mul(x, x), x);
  auto g = ag::backward(y, {x}, /*create_graph=*/true);
  auto h = ag::backward(g[0], {x});
  CHECK(h[0].item() == doctest::Approx(12.0));
}

TEST_CASE("softmax-then-sum gradient matches finite differences") {
  Rng rng(3);
  Tensor x = gradcheck::random_tensor({1, 4}, rng);
  x.set_requires_grad(true);
  // sum of softmax is identically 1; rel err is exactly 0
  std::vector<Tensor> ps = {x};
  double err = gradcheck::fd_check(ps, [&] { return ag::sum_all(ag::softmax_lastdim(x)); });
  CHECK(err < 1e-6);
  // weighted variant exercises a non-constant path at the same tolerance
  Tensor w = gradcheck::random_tensor({1, 4}, rng, 0.2, 1.0);
  err = gradcheck::fd_check(ps, [&] { return ag::sum_all(ag::mul(ag::softmax_lastdim(x), w)); });
  CHECK(err < 1e-6);
}

TEST_CASE("detach blocks gradient flow and preserves bits") {
  Tensor x = Tensor::from({3}, {0.5, -1.25, 3.0});
  x.set_requires_grad(true);
  Tensor d = x.detach();
  CHECK(std::memcmp(d.data().data(), x.data().data(), 3 * sizeof(double)) == 0);
  CHECK_FALSE(d.requires_grad());

  Tensor y = ag::sum_all(ag::mul(d, d));
  CHECK_FALSE(y.requires_grad());

  // backward through a function that uses x only via detach: zero grads
  Tensor z = ag::add(ag::sum_all(ag::mul(d, d)), ag::mul_scalar(ag::sum_all(x), 0.0));
  auto g = ag::backward(z, {x});
  for (int i = 0; i < 3; ++i) CHECK(g[0].at(i) == 0.0);
}

TEST_CASE("inner step with zero step size leaves outer gradients unchanged") {
  // theta' = theta - 0 * detach(grad); outer loss grads equal the plain path
  Tensor theta = Tensor::from({2}, {0.7, -0.3});
  theta.set_requires_grad(true);

  Tensor inner = ag::sum_all(ag::mul(theta, theta));
  auto gi = ag::backward(inner, {theta});
  Tensor theta_adapted = ag::sub(theta, ag::mul_scalar(gi[0].detach(), 0.0));
  Tensor outer = ag::sum_all(ag::mul(theta_adapted, theta_adapted));
  auto g1 = ag::backward(outer, {theta});

  Tensor outer_plain = ag::sum_all(ag::mul(theta, theta));
  auto g2 = ag::backward(outer_plain, {theta});
  for (int i = 0; i < 2; ++i) CHECK(g1[0].at(i) == doctest::Approx(g2[0].at(i)));
}

TEST_CASE("all primitives pass first-order finite differences") {
  auto worst = gradcheck::primitive_fd_suite(/*trials=*/20, /*seed=*/42);
  CHECK(worst.size() > 30);
  for (const auto& [name, err] : worst) {
    INFO("op ", name, " worst rel err ", err);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("second-order composite matches finite differences of the gradient") {
  double err = gradcheck::second_order_suite(/*trials=*/10, /*seed=*/43);
  CHECK(err < 1e-4);
}

TEST_CASE("graph replay determinism") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = gradcheck::random_tensor({4, 4}, rng);
    x.set_requires_grad(true);
    Tensor w = gradcheck::random_tensor({4, 4}, rng);
    Tensor y = ag::sum_all(ag::sigmoid(ag::matmul(x, w)));
    auto g = ag::backward(y, {x});
    return std::pair{y.item(), g[0].data()};
  };
  auto [y1, g1] = run(17);
  auto [y2, g2] = run(17);
  CHECK(std::memcmp(&y1, &y2, sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("error paths") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3, 3}, std::vector<double>(9, 0.0));

  CHECK_THROWS_WITH_AS(ag::add(a, b), doctest::Contains("add"), std::runtime_error);
  CHECK_THROWS_WITH_AS(ag::matmul(a, a), doctest::Contains("matmul"), std::runtime_error);

  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor vec = ag::mul(x, x);
  CHECK_THROWS_WITH_AS(ag::backward(vec, {x}), doctest::Contains("scalar"), std::runtime_error);

  // wrt without requires_grad is rejected
  Tensor c = Tensor::from({2}, {1, 2});
  Tensor y = ag::sum_all(ag::mul(x, x));
  CHECK_THROWS_AS(ag::backward(y, {c}), std::runtime_error);

  // graph-produced tensor unreachable from the output
  Tensor other = ag::mul(x, x);
  Tensor y2 = ag::sum_all(x);
  CHECK_THROWS_WITH_AS(ag::backward(y2, {other}), doctest::Contains("unreachable"),
                       std::runtime_error);

  // NaN detection in checked mode
  ag::set_checked(true);
  Tensor neg1 = Tensor::from({1}, {-1.0});
  CHECK_THROWS_WITH_AS(ag::log(neg1), doctest::Contains("non-finite"), std::runtime_error);
  ag::set_checked(false);
  CHECK_NOTHROW(ag::log(neg1));
}

TEST_CASE("gradient accumulates across fan-out") {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  Tensor y = ag::add(ag::mul(x, x), ag::mul_scalar(x, 3.0));  // x^2 + 3x
  auto g = ag::backward(y, {x});
  CHECK(g[0].item() == doctest::Approx(7.0));
}
