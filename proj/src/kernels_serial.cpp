#include "adaseg/kernels.hpp"

namespace adaseg::kernels {

int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }

void matmul_serial(const double* a, const double* b, double* c, int n, int k, int m) {
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

void conv2d_serial(const double* x, const double* w, double* y,
                   int cin, int h, int wdt, int cout, int stride) {
  const int oh = conv_out_dim(h, stride);
  const int ow = conv_out_dim(wdt, stride);
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

void conv2d_input_grad_serial(const double* g, const double* w, double* gx,
                              int cin, int h, int wdt, int cout, int stride) {
  const int oh = conv_out_dim(h, stride);
  const int ow = conv_out_dim(wdt, stride);
  for (int ci = 0; ci < cin; ++ci) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < wdt; ++ix) {
        double acc = 0.0;
        for (int co = 0; co < cout; ++co) {
          const double* gc = g + (static_cast<std::int64_t>(co) * oh) * ow;
          const double* wc = w + ((static_cast<std::int64_t>(co) * cin + ci) * 3) * 3;
          for (int ky = 0; ky < 3; ++ky) {
            const int num = iy - ky + 1;  // oy * stride
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

void conv2d_weight_grad_serial(const double* g, const double* x, double* gw,
                               int cin, int h, int wdt, int cout, int stride) {
  const int oh = conv_out_dim(h, stride);
  const int ow = conv_out_dim(wdt, stride);
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

void upsample2x(const double* x, double* y, int c, int h, int w) {
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = x + (static_cast<std::int64_t>(ci) * h) * w;
    double* yc = y + (static_cast<std::int64_t>(ci) * 2 * h) * (2 * w);
    for (int iy = 0; iy < 2 * h; ++iy)
      for (int ix = 0; ix < 2 * w; ++ix)
        yc[iy * 2 * w + ix] = xc[(iy / 2) * w + (ix / 2)];
  }
}

void sumpool2x(const double* x, double* y, int c, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = x + (static_cast<std::int64_t>(ci) * h) * w;
    double* yc = y + (static_cast<std::int64_t>(ci) * oh) * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        yc[oy * ow + ox] = xc[(2 * oy) * w + 2 * ox] + xc[(2 * oy) * w + 2 * ox + 1] +
                           xc[(2 * oy + 1) * w + 2 * ox] + xc[(2 * oy + 1) * w + 2 * ox + 1];
  }
}

}  // namespace adaseg::kernels
