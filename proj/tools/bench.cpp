// Compares the serial reference kernels against the OpenMP variants and
// reports wall time plus the max absolute difference (expected: 0, the OpenMP
// versions keep the serial summation order per output element).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "adaseg/kernels.hpp"
#include "adaseg/rng.hpp"

using adaseg::Rng;
namespace k = adaseg::kernels;

namespace {

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

template <class F>
double time_best_of(int reps, F f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_ms();
    f();
    best = std::min(best, now_ms() - t0);
  }
  return best;
}

}  // namespace

int main() {
  Rng rng(7);
  std::printf("%-28s %10s %10s %8s %10s\n", "kernel", "serial ms", "omp ms", "speedup", "max |d|");

  {
    const int n = 256, kk = 256, m = 256;
    auto a = random_vec(static_cast<std::size_t>(n) * kk, rng);
    auto b = random_vec(static_cast<std::size_t>(kk) * m, rng);
    std::vector<double> c1(static_cast<std::size_t>(n) * m), c2(c1.size());
    const double ts = time_best_of(3, [&] { k::matmul_serial(a.data(), b.data(), c1.data(), n, kk, m); });
    const double tp = time_best_of(3, [&] { k::matmul_omp(a.data(), b.data(), c2.data(), n, kk, m); });
    std::printf("%-28s %10.2f %10.2f %8.2fx %10.2e\n", "matmul 256^3", ts, tp, ts / tp,
                max_abs_diff(c1, c2));
  }

  {
    const int cin = 32, h = 64, w = 64, cout = 32, stride = 1;
    auto x = random_vec(static_cast<std::size_t>(cin) * h * w, rng);
    auto wt = random_vec(static_cast<std::size_t>(cout) * cin * 9, rng);
    const int oh = k::conv_out_dim(h, stride), ow = k::conv_out_dim(w, stride);
    std::vector<double> y1(static_cast<std::size_t>(cout) * oh * ow), y2(y1.size());
    const double ts = time_best_of(3, [&] { k::conv2d_serial(x.data(), wt.data(), y1.data(), cin, h, w, cout, stride); });
    const double tp = time_best_of(3, [&] { k::conv2d_omp(x.data(), wt.data(), y2.data(), cin, h, w, cout, stride); });
    std::printf("%-28s %10.2f %10.2f %8.2fx %10.2e\n", "conv2d 32x64x64 -> 32", ts, tp, ts / tp,
                max_abs_diff(y1, y2));

    std::vector<double> g = random_vec(y1.size(), rng);
    std::vector<double> gx1(x.size()), gx2(x.size());
    const double ts2 = time_best_of(3, [&] { k::conv2d_input_grad_serial(g.data(), wt.data(), gx1.data(), cin, h, w, cout, stride); });
    const double tp2 = time_best_of(3, [&] { k::conv2d_input_grad_omp(g.data(), wt.data(), gx2.data(), cin, h, w, cout, stride); });
    std::printf("%-28s %10.2f %10.2f %8.2fx %10.2e\n", "conv2d input grad", ts2, tp2, ts2 / tp2,
                max_abs_diff(gx1, gx2));

    std::vector<double> gw1(wt.size()), gw2(wt.size());
    const double ts3 = time_best_of(3, [&] { k::conv2d_weight_grad_serial(g.data(), x.data(), gw1.data(), cin, h, w, cout, stride); });
    const double tp3 = time_best_of(3, [&] { k::conv2d_weight_grad_omp(g.data(), x.data(), gw2.data(), cin, h, w, cout, stride); });
    std::printf("%-28s %10.2f %10.2f %8.2fx %10.2e\n", "conv2d weight grad", ts3, tp3, ts3 / tp3,
                max_abs_diff(gw1, gw2));
  }

  return 0;
}
