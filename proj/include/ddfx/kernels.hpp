#pragma once

#include <cstdint>

// Hot loops behind the autodiff primitives. Each kernel comes in two flavors:
// the OpenMP version used by the library, and a plain serial version in
// `reference` kept for tests and benchmarks. Both visit every output element
// with the same summation order, so results agree bit for bit and do not
// depend on the thread count.

namespace ddfx::kernels {

struct GemmDims {
    std::int64_t m, n, k;
};

// C[m x n] (+)= op(A) * op(B), op(A) is m x k, op(B) is k x n.
// A is stored k x m when trans_a, B is stored n x k when trans_b.
void gemm(bool trans_a, bool trans_b, GemmDims dims, const double* a, const double* b, double* c,
          bool accumulate);

struct ConvDims {
    std::int64_t batch, height, width, in_ch, out_ch;
};

// 3x3 convolution, stride 1, zero "same" padding, NHWC layout.
// Weights are stored [out_ch, 3, 3, in_ch]. The gradient kernels accumulate
// into dx / dw.
void conv3x3(ConvDims dims, const double* x, const double* w, double* y);
void conv3x3_grad_input(ConvDims dims, const double* dy, const double* w, double* dx);
void conv3x3_grad_weight(ConvDims dims, const double* x, const double* dy, double* dw);

namespace reference {
void gemm(bool trans_a, bool trans_b, GemmDims dims, const double* a, const double* b, double* c,
          bool accumulate);
void conv3x3(ConvDims dims, const double* x, const double* w, double* y);
void conv3x3_grad_input(ConvDims dims, const double* dy, const double* w, double* dx);
void conv3x3_grad_weight(ConvDims dims, const double* x, const double* dy, double* dw);
}  // namespace reference

}  // namespace ddfx::kernels
