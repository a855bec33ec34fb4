#pragma once

#include <cstdint>

// Dense numeric kernels behind the autograd ops. Each heavy kernel has a
// serial reference implementation and an OpenMP variant. The OpenMP variants
// parallelize over independent output elements with the same inner summation
// order, so both backends produce bit-identical results; the serial versions
// are kept as the reference the tests compare against, and tools/bench.cpp
// measures the speedup.
namespace adaseg::kernels {

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);

// C[n,m] = A[n,k] @ B[k,m]
void matmul_serial(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_omp(const double* a, const double* b, double* c, int n, int k, int m);
void matmul(const double* a, const double* b, double* c, int n, int k, int m);

// 3x3 convolution, zero padding 1, stride in {1, 2}.
// x: [cin, h, w], w: [cout, cin, 3, 3], y: [cout, oh, ow] with oh = (h-1)/stride+1.
int conv_out_dim(int in, int stride);
void conv2d_serial(const double* x, const double* w, double* y,
                   int cin, int h, int wdt, int cout, int stride);
void conv2d_omp(const double* x, const double* w, double* y,
                int cin, int h, int wdt, int cout, int stride);
void conv2d(const double* x, const double* w, double* y,
            int cin, int h, int wdt, int cout, int stride);

// gradient w.r.t. the convolution input; g: [cout, oh, ow], gx: [cin, h, w]
void conv2d_input_grad_serial(const double* g, const double* w, double* gx,
                              int cin, int h, int wdt, int cout, int stride);
void conv2d_input_grad_omp(const double* g, const double* w, double* gx,
                           int cin, int h, int wdt, int cout, int stride);
void conv2d_input_grad(const double* g, const double* w, double* gx,
                       int cin, int h, int wdt, int cout, int stride);

// gradient w.r.t. the convolution weights; g: [cout, oh, ow], gw: [cout, cin, 3, 3]
void conv2d_weight_grad_serial(const double* g, const double* x, double* gw,
                               int cin, int h, int wdt, int cout, int stride);
void conv2d_weight_grad_omp(const double* g, const double* x, double* gw,
                            int cin, int h, int wdt, int cout, int stride);
void conv2d_weight_grad(const double* g, const double* x, double* gw,
                        int cin, int h, int wdt, int cout, int stride);

// nearest-neighbor 2x upsample and its adjoint 2x2 box sum, [c, h, w] layouts
void upsample2x(const double* x, double* y, int c, int h, int w);
void sumpool2x(const double* x, double* y, int c, int h, int w);  // h, w of the *input*

}  // namespace adaseg::kernels
