#include "adaseg/kernels.hpp"

#include <atomic>

namespace adaseg::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

void matmul_omp(const double* a, const double* b, double* c, int n, int k, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    double* crow = c + static_cast<std::int64_t>(i) * m;
    for (int j = 0; j < m; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::int64_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv2d_omp(const double* x, const double* w, double* y,
                int cin, int h, int wdt, int cout, int stride) {
  const int oh = conv_out_dim(h, stride);
  const int ow = conv_out_dim(wdt, stride);
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          const double* xc = x + (static_cast<std::int64_t>(ci) * h) * wdt;
          const double* wc = w + ((static_cast<std::int64_t>(co) * cin + ci) * 3) * 3;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= wdt) continue;
              acc += xc[iy * wdt + ix] * wc[ky * 3 + kx];
            }
          }
        }
        y[(static_cast<std::int64_t>(co) * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void conv2d_input_grad_omp(const double* g, const double* w, double* gx,
                           int cin, int h, int wdt, int cout, int stride) {
  const int oh = conv_out_dim(h, stride);
  const int ow = conv_out_dim(wdt, stride);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cin; ++ci) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < wdt; ++ix) {
        double acc = 0.0;
        for (int co = 0; co < cout; ++co) {
          const double* gc = g + (static_cast<std::int64_t>(co) * oh) * ow;
          const double* wc = w + ((static_cast<std::int64_t>(co) * cin + ci) * 3) * 3;
          for (int ky = 0; ky < 3; ++ky) {
            const int num = iy - ky + 1;
            if (num < 0 || num % stride != 0) continue;
            const int oy = num / stride;
            if (oy >= oh) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int numx = ix - kx + 1;
              if (numx < 0 || numx % stride != 0) continue;
              const int ox = numx / stride;
              if (ox >= ow) continue;
              acc += gc[oy * ow + ox] * wc[ky * 3 + kx];
            }
          }
        }
        gx[(static_cast<std::int64_t>(ci) * h + iy) * wdt + ix] = acc;
      }
    }
  }
}

void conv2d_weight_grad_omp(const double* g, const double* x, double* gw,
                            int cin, int h, int wdt, int cout, int stride) {
  const int oh = conv_out_dim(h, stride);
  const int ow = conv_out_dim(wdt, stride);
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* gc = g + (static_cast<std::int64_t>(co) * oh) * ow;
      const double* xc = x + (static_cast<std::int64_t>(ci) * h) * wdt;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= wdt) continue;
              acc += gc[oy * ow + ox] * xc[iy * wdt + ix];
            }
          }
          gw[((static_cast<std::int64_t>(co) * cin + ci) * 3 + ky) * 3 + kx] = acc;
        }
      }
    }
  }
}

void matmul(const double* a, const double* b, double* c, int n, int k, int m) {
  if (backend() == Backend::OpenMP && static_cast<std::int64_t>(n) * k * m > 4096)
    matmul_omp(a, b, c, n, k, m);
  else
    matmul_serial(a, b, c, n, k, m);
}

void conv2d(const double* x, const double* w, double* y,
            int cin, int h, int wdt, int cout, int stride) {
  if (backend() == Backend::OpenMP)
    conv2d_omp(x, w, y, cin, h, wdt, cout, stride);
  else
    conv2d_serial(x, w, y, cin, h, wdt, cout, stride);
}

void conv2d_input_grad(const double* g, const double* w, double* gx,
                       int cin, int h, int wdt, int cout, int stride) {
  if (backend() == Backend::OpenMP)
    conv2d_input_grad_omp(g, w, gx, cin, h, wdt, cout, stride);
  else
    conv2d_input_grad_serial(g, w, gx, cin, h, wdt, cout, stride);
}

void conv2d_weight_grad(const double* g, const double* x, double* gw,
                        int cin, int h, int wdt, int cout, int stride) {
  if (backend() == Backend::OpenMP)
    conv2d_weight_grad_omp(g, x, gw, cin, h, wdt, cout, stride);
  else
    conv2d_weight_grad_serial(g, x, gw, cin, h, wdt, cout, stride);
}

}  // namespace adaseg::kernels
