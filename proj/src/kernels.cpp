#include "ddfx/kernels.hpp"

#include <vector>

namespace ddfx::kernels {

namespace {

inline double at_a(bool trans, const double* a, std::int64_t m, std::int64_t k, std::int64_t i, std::int64_t p) {
    return trans ? a[p * m + i] : a[i * k + p];
}

inline double at_b(bool trans, const double* b, std::int64_t k, std::int64_t n, std::int64_t p, std::int64_t j) {
    return trans ? b[j * k + p] : b[p * n + j];
}

}  // namespace

void gemm(bool trans_a, bool trans_b, GemmDims dims, const double* a, const double* b, double* c,
          bool accumulate) {
    const auto [m, n, k] = dims;
    if (!trans_b) {
#pragma omp parallel
        {
            std::vector<double> acc(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
            for (std::int64_t i = 0; i < m; ++i) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t p = 0; p < k; ++p) {
                    const double av = at_a(trans_a, a, m, k, i, p);
                    const double* brow = b + p * n;
                    for (std::int64_t j = 0; j < n; ++j) acc[j] += av * brow[j];
                }
                double* crow = c + i * n;
                if (accumulate)
                    for (std::int64_t j = 0; j < n; ++j) crow[j] += acc[j];
                else
                    for (std::int64_t j = 0; j < n; ++j) crow[j] = acc[j];
            }
        }
        return;
    }
#pragma omp parallel
    {
        std::vector<double> arow(static_cast<std::size_t>(k));
#pragma omp for schedule(static)
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t p = 0; p < k; ++p) arow[p] = at_a(trans_a, a, m, k, i, p);
            for (std::int64_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double s = 0.0;
                for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
                if (accumulate)
                    c[i * n + j] += s;
                else
                    c[i * n + j] = s;
            }
        }
    }
}

void conv3x3(ConvDims d, const double* x, const double* w, double* y) {
    const std::int64_t ci_n = d.in_ch, co_n = d.out_ch;
    // [ky][kx][ci][co] so the innermost loop is contiguous.
    std::vector<double> wt(static_cast<std::size_t>(9 * ci_n * co_n));
    for (std::int64_t co = 0; co < co_n; ++co)
        for (std::int64_t kk = 0; kk < 9; ++kk)
            for (std::int64_t ci = 0; ci < ci_n; ++ci) wt[(kk * ci_n + ci) * co_n + co] = w[(co * 9 + kk) * ci_n + ci];
    const std::int64_t rows = d.batch * d.height;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(co_n));
#pragma omp for schedule(static)
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int64_t b = r / d.height, h = r % d.height;
            for (std::int64_t xw = 0; xw < d.width; ++xw) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t ky = 0; ky < 3; ++ky) {
                    const std::int64_t iy = h + ky - 1;
                    if (iy < 0 || iy >= d.height) continue;
                    for (std::int64_t kx = 0; kx < 3; ++kx) {
                        const std::int64_t ix = xw + kx - 1;
                        if (ix < 0 || ix >= d.width) continue;
                        const double* xp = x + ((b * d.height + iy) * d.width + ix) * ci_n;
                        const double* wp = wt.data() + (ky * 3 + kx) * ci_n * co_n;
                        for (std::int64_t ci = 0; ci < ci_n; ++ci) {
                            const double xv = xp[ci];
                            const double* wr = wp + ci * co_n;
                            for (std::int64_t co = 0; co < co_n; ++co) acc[co] += xv * wr[co];
                        }
                    }
                }
                double* yp = y + ((b * d.height + h) * d.width + xw) * co_n;
                for (std::int64_t co = 0; co < co_n; ++co) yp[co] = acc[co];
            }
        }
    }
}

void conv3x3_grad_input(ConvDims d, const double* dy, const double* w, double* dx) {
    const std::int64_t ci_n = d.in_ch, co_n = d.out_ch;
    const std::int64_t rows = d.batch * d.height;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(ci_n));
#pragma omp for schedule(static)
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int64_t b = r / d.height, h = r % d.height;
            for (std::int64_t xw = 0; xw < d.width; ++xw) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t ky = 0; ky < 3; ++ky) {
                    const std::int64_t oy = h - ky + 1;
                    if (oy < 0 || oy >= d.height) continue;
                    for (std::int64_t kx = 0; kx < 3; ++kx) {
                        const std::int64_t ox = xw - kx + 1;
                        if (ox < 0 || ox >= d.width) continue;
                        const double* gp = dy + ((b * d.height + oy) * d.width + ox) * co_n;
                        for (std::int64_t co = 0; co < co_n; ++co) {
                            const double g = gp[co];
                            const double* wr = w + ((co * 3 + ky) * 3 + kx) * ci_n;
                            for (std::int64_t ci = 0; ci < ci_n; ++ci) acc[ci] += g * wr[ci];
                        }
                    }
                }
                double* xp = dx + ((b * d.height + h) * d.width + xw) * ci_n;
                for (std::int64_t ci = 0; ci < ci_n; ++ci) xp[ci] += acc[ci];
            }
        }
    }
}

void conv3x3_grad_weight(ConvDims d, const double* x, const double* dy, double* dw) {
    const std::int64_t ci_n = d.in_ch, co_n = d.out_ch;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(ci_n));
#pragma omp for schedule(static)
        for (std::int64_t idx = 0; idx < co_n * 9; ++idx) {
            const std::int64_t co = idx / 9, ky = (idx % 9) / 3, kx = idx % 3;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::int64_t b = 0; b < d.batch; ++b)
                for (std::int64_t h = 0; h < d.height; ++h) {
                    const std::int64_t iy = h + ky - 1;
                    if (iy < 0 || iy >= d.height) continue;
                    for (std::int64_t xw = 0; xw < d.width; ++xw) {
                        const std::int64_t ix = xw + kx - 1;
                        if (ix < 0 || ix >= d.width) continue;
                        const double g = dy[((b * d.height + h) * d.width + xw) * co_n + co];
                        const double* xp = x + ((b * d.height + iy) * d.width + ix) * ci_n;
                        for (std::int64_t ci = 0; ci < ci_n; ++ci) acc[ci] += g * xp[ci];
                    }
                }
            double* wp = dw + idx * ci_n;
            for (std::int64_t ci = 0; ci < ci_n; ++ci) wp[ci] += acc[ci];
        }
    }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, GemmDims dims, const double* a, const double* b, double* c,
          bool accumulate) {
    const auto [m, n, k] = dims;
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += at_a(trans_a, a, m, k, i, p) * at_b(trans_b, b, k, n, p, j);
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
}

void conv3x3(ConvDims d, const double* x, const double* w, double* y) {
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t h = 0; h < d.height; ++h)
            for (std::int64_t xw = 0; xw < d.width; ++xw)
                for (std::int64_t co = 0; co < d.out_ch; ++co) {
                    double s = 0.0;
                    for (std::int64_t ky = 0; ky < 3; ++ky)
                        for (std::int64_t kx = 0; kx < 3; ++kx) {
                            const std::int64_t iy = h + ky - 1, ix = xw + kx - 1;
                            if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                            for (std::int64_t ci = 0; ci < d.in_ch; ++ci)
                                s += x[((b * d.height + iy) * d.width + ix) * d.in_ch + ci] *
                                     w[((co * 3 + ky) * 3 + kx) * d.in_ch + ci];
                        }
                    y[((b * d.height + h) * d.width + xw) * d.out_ch + co] = s;
                }
}

void conv3x3_grad_input(ConvDims d, const double* dy, const double* w, double* dx) {
    for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t h = 0; h < d.height; ++h)
            for (std::int64_t xw = 0; xw < d.width; ++xw)
                for (std::int64_t ci = 0; ci < d.in_ch; ++ci) {
                    double s = 0.0;
                    for (std::int64_t ky = 0; ky < 3; ++ky)
                        for (std::int64_t kx = 0; kx < 3; ++kx) {
                            const std::int64_t oy = h - ky + 1, ox = xw - kx + 1;
                            if (oy < 0 || oy >= d.height || ox < 0 || ox >= d.width) continue;
                            for (std::int64_t co = 0; co < d.out_ch; ++co)
                                s += dy[((b * d.height + oy) * d.width + ox) * d.out_ch + co] *
                                     w[((co * 3 + ky) * 3 + kx) * d.in_ch + ci];
                        }
                    dx[((b * d.height + h) * d.width + xw) * d.in_ch + ci] += s;
                }
}

void conv3x3_grad_weight(ConvDims d, const double* x, const double* dy, double* dw) {
    for (std::int64_t co = 0; co < d.out_ch; ++co)
        for (std::int64_t ky = 0; ky < 3; ++ky)
            for (std::int64_t kx = 0; kx < 3; ++kx)
                for (std::int64_t ci = 0; ci < d.in_ch; ++ci) {
                    double s = 0.0;
                    for (std::int64_t b = 0; b < d.batch; ++b)
                        for (std::int64_t h = 0; h < d.height; ++h)
                            for (std::int64_t xw = 0; xw < d.width; ++xw) {
                                const std::int64_t iy = h + ky - 1, ix = xw + kx - 1;
                                if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                                s += dy[((b * d.height + h) * d.width + xw) * d.out_ch + co] *
                                     x[((b * d.height + iy) * d.width + ix) * d.in_ch + ci];
                            }
                    dw[((co * 3 + ky) * 3 + kx) * d.in_ch + ci] += s;
                }
}

}  // namespace reference

}  // namespace ddfx::kernels
