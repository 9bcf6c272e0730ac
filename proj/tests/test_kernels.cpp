#include <omp.h>

#include "doctest.h"
#include "ddfx/kernels.hpp"
#include "helpers.hpp"

using namespace ddfx;
using testutil::random_tensor;

TEST_CASE("parallel gemm matches the serial reference bit for bit") {
    for (bool ta : {false, true})
        for (bool tb : {false, true})
            for (bool acc : {false, true}) {
                const kernels::GemmDims d{7, 13, 9};
                const auto a = random_tensor({d.m * d.k}, 1), b = random_tensor({d.k * d.n}, 2);
                auto c1 = random_tensor({d.m * d.n}, 3), c2 = c1;
                kernels::gemm(ta, tb, d, a.vec().data(), b.vec().data(), c1.data().data(), acc);
                kernels::reference::gemm(ta, tb, d, a.vec().data(), b.vec().data(), c2.data().data(), acc);
                CHECK(c1 == c2);
            }
}

TEST_CASE("parallel conv kernels match the serial reference bit for bit") {
    const kernels::ConvDims d{2, 6, 5, 3, 4};
    const auto x = random_tensor({d.batch * d.height * d.width * d.in_ch}, 4);
    const auto w = random_tensor({d.out_ch * 9 * d.in_ch}, 5);
    const auto dy = random_tensor({d.batch * d.height * d.width * d.out_ch}, 6);
    Tensor y1({d.batch * d.height * d.width * d.out_ch}), y2 = y1;
    kernels::conv3x3(d, x.vec().data(), w.vec().data(), y1.data().data());
    kernels::reference::conv3x3(d, x.vec().data(), w.vec().data(), y2.data().data());
    CHECK(y1 == y2);
    Tensor dx1({d.batch * d.height * d.width * d.in_ch}), dx2 = dx1;
    kernels::conv3x3_grad_input(d, dy.vec().data(), w.vec().data(), dx1.data().data());
    kernels::reference::conv3x3_grad_input(d, dy.vec().data(), w.vec().data(), dx2.data().data());
    CHECK(dx1 == dx2);
    Tensor dw1({d.out_ch * 9 * d.in_ch}), dw2 = dw1;
    kernels::conv3x3_grad_weight(d, x.vec().data(), dy.vec().data(), dw1.data().data());
    kernels::reference::conv3x3_grad_weight(d, x.vec().data(), dy.vec().data(), dw2.data().data());
    CHECK(dw1 == dw2);
}

TEST_CASE("kernel results do not depend on the thread count") {
    const kernels::GemmDims d{33, 17, 21};
    const auto a = random_tensor({d.m * d.k}, 7), b = random_tensor({d.k * d.n}, 8);
    Tensor c1({d.m * d.n}), c4 = c1;
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::gemm(false, false, d, a.vec().data(), b.vec().data(), c1.data().data(), false);
    omp_set_num_threads(4);
    kernels::gemm(false, false, d, a.vec().data(), b.vec().data(), c4.data().data(), false);
    omp_set_num_threads(saved);
    CHECK(c1 == c4);
}

TEST_CASE("conv3x3 matches a direct zero-padded convolution") {
    const kernels::ConvDims d{1, 4, 3, 2, 2};
    const auto x = random_tensor({d.height * d.width * d.in_ch}, 9);
    const auto w = random_tensor({d.out_ch * 9 * d.in_ch}, 10);
    Tensor y({d.height * d.width * d.out_ch});
    kernels::conv3x3(d, x.vec().data(), w.vec().data(), y.data().data());
    for (std::int64_t i = 0; i < d.height; ++i)
        for (std::int64_t j = 0; j < d.width; ++j)
            for (std::int64_t o = 0; o < d.out_ch; ++o) {
                double s = 0;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const auto r = i + di, c = j + dj;
                        if (r < 0 || c < 0 || r >= d.height || c >= d.width) continue;
                        for (std::int64_t ci = 0; ci < d.in_ch; ++ci)
                            s += x[(r * d.width + c) * d.in_ch + ci] * w[((o * 3 + di + 1) * 3 + dj + 1) * d.in_ch + ci];
                    }
                CHECK(std::abs(y[(i * d.width + j) * d.out_ch + o] - s) < 1e-12);
            }
}
