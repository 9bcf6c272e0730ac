#include <cmath>

#include "doctest.h"
#include "ddfx/errors.hpp"
#include "ddfx/sfa.hpp"
#include "helpers.hpp"

using namespace ddfx;
using namespace ddfx::sfa;
using testutil::random_tensor;

namespace {

constexpr std::int64_t kD = 4;

struct RawAttn {
    Tensor q, k, v, o;
};

RawAttn raw_attn(std::uint64_t seed, std::int64_t d = kD) {
    return {random_tensor({d, d}, seed, -0.8, 0.8), random_tensor({d, d}, seed + 1, -0.8, 0.8),
            random_tensor({d, d}, seed + 2, -0.8, 0.8), random_tensor({d, d}, seed + 3, -0.8, 0.8)};
}

AttentionParams to_params(const RawAttn& r) {
    return {{constant(r.q), {}}, {constant(r.k), {}}, {constant(r.v), {}}, {constant(r.o), {}}};
}

std::vector<double> matvec(const Tensor& m, const double* x) {
    const auto r = m.dim(0), c = m.dim(1);
    std::vector<double> y(static_cast<std::size_t>(r), 0.0);
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) y[i] += m[i * c + j] * x[j];
    return y;
}

// Literal single-head attention for one query over a list of context rows.
std::vector<double> attend(const RawAttn& a, const double* query, const std::vector<const double*>& ctx, std::int64_t d) {
    const auto q = matvec(a.q, query);
    std::vector<double> scores;
    for (const double* c : ctx) {
        const auto k = matvec(a.k, c);
        double s = 0;
        for (std::int64_t i = 0; i < d; ++i) s += q[i] * k[i];
        scores.push_back(s / std::sqrt(static_cast<double>(d)));
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double z = 0;
    for (double& s : scores) z += (s = std::exp(s - mx));
    std::vector<double> mixed(static_cast<std::size_t>(d), 0.0);
    for (std::size_t j = 0; j < ctx.size(); ++j) {
        const auto v = matvec(a.v, ctx[j]);
        for (std::int64_t i = 0; i < d; ++i) mixed[i] += scores[j] / z * v[i];
    }
    return matvec(a.o, mixed.data());
}

Tensor zeros_like_attn() { return Tensor({kD, kD}); }

double bilinear_ref(const Tensor& grid, double r, double c, std::int64_t ch) {
    const auto H = grid.dim(0), W = grid.dim(1), C = grid.dim(2);
    const auto r0 = static_cast<std::int64_t>(std::floor(r)), c0 = static_cast<std::int64_t>(std::floor(c));
    double acc = 0;
    for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) {
            const auto rr = r0 + dr, cc = c0 + dc;
            if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
            const double w = (dr ? r - r0 : 1 - (r - r0)) * (dc ? c - c0 : 1 - (c - c0));
            acc += w * grid[(rr * W + cc) * C + ch];
        }
    return acc;
}

}  // namespace

TEST_CASE("single-token self-attention equals W_o W_v x") {
    const auto a = raw_attn(1);
    const auto x = random_tensor({1, kD}, 2);
    const auto y = self_attention(to_params(a), constant(x)).value();
    const auto ref = matvec(a.o, matvec(a.v, x.vec().data()).data());
    for (std::int64_t i = 0; i < kD; ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
}

TEST_CASE("self-attention matches a double-loop oracle and is permutation equivariant") {
    const auto a = raw_attn(3);
    const auto x = random_tensor({3, kD}, 4);
    const auto y = self_attention(to_params(a), constant(x)).value();
    std::vector<const double*> ctx{x.vec().data(), x.vec().data() + kD, x.vec().data() + 2 * kD};
    for (std::int64_t n = 0; n < 3; ++n) {
        const auto ref = attend(a, x.vec().data() + n * kD, ctx, kD);
        for (std::int64_t i = 0; i < kD; ++i) CHECK(std::abs(y[n * kD + i] - ref[i]) < 1e-10);
    }
    Tensor xp({3, kD});
    const int perm[3] = {2, 0, 1};
    for (int n = 0; n < 3; ++n)
        for (std::int64_t i = 0; i < kD; ++i) xp[n * kD + i] = x[perm[n] * kD + i];
    const auto yp = self_attention(to_params(a), constant(xp)).value();
    for (int n = 0; n < 3; ++n)
        for (std::int64_t i = 0; i < kD; ++i) CHECK(std::abs(yp[n * kD + i] - y[perm[n] * kD + i]) < 1e-14);
}

TEST_CASE("attention weights are a distribution per query") {
    const auto p = to_params(raw_attn(5));
    const auto w = attention_weights(p, constant(random_tensor({2, 5, kD}, 6)), constant(random_tensor({2, 7, kD}, 7))).value();
    for (std::int64_t q = 0; q < 10; ++q) {
        double s = 0;
        for (std::int64_t k = 0; k < 7; ++k) {
            CHECK(w[q * 7 + k] >= 0.0);
            s += w[q * 7 + k];
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("stage 1: zero projections are the identity, otherwise input + self-attention") {
    const RawAttn zero{zeros_like_attn(), zeros_like_attn(), zeros_like_attn(), zeros_like_attn()};
    const auto x = random_tensor({6, kD}, 8);
    CHECK(sfa_stage1(to_params(zero), constant(x)).value() == x);
    const auto p = to_params(raw_attn(9));
    const auto y = sfa_stage1(p, constant(x)).value();
    CHECK(y == ad::add(constant(x), self_attention(p, constant(x))).value());
    CHECK(y.shape() == x.shape());
}

TEST_CASE("gated self-attention") {
    const auto a = raw_attn(10);
    const auto v1 = random_tensor({2, 5, kD}, 11), cs = random_tensor({2, 3, kD}, 12);
    auto gated = [&](double g) { return GatedFusionParams{constant(Tensor({1}, {g})), to_params(a)}; };

    CHECK(gated_self_attention(constant(v1), constant(cs), gated(0.0)).value() == v1);

    const auto sat = gated_self_attention(constant(v1), constant(cs), gated(20.0)).value();
    const auto joint = ad::concat({constant(v1), constant(cs)}, 1);
    const auto attn = ad::slice(self_attention(to_params(a), joint), 1, 0, 5).value();
    CHECK(max_abs_diff(sat, ad::add(constant(v1), constant(attn)).value()) < 1e-9);

    const auto none = gated_self_attention(constant(v1), constant(Tensor({2, 0, kD})), gated(0.7)).value();
    const auto plain = ad::add(constant(v1), ad::scale(self_attention(to_params(a), constant(v1)), std::tanh(0.7))).value();
    CHECK(max_abs_diff(none, plain) < 1e-12);

    CHECK_THROWS_AS(gated_self_attention(constant(v1), constant(Tensor({2, 3, kD + 1})), gated(0.1)), ContractError);
}

TEST_CASE("deformable attention: zero offsets with identity value map doubles the input") {
    const std::int64_t K = 3;
    const auto v2 = random_tensor({2, 3, 4, kD}, 13);
    Tensor eye({kD, kD});
    for (std::int64_t i = 0; i < kD; ++i) eye[i * kD + i] = 1.0;
    DeformParams p{to_params(raw_attn(14)), constant(Tensor({3 * K, 2 * kD})), constant(Tensor({3 * K})), constant(eye), K};
    const auto out = deformable_text_attention(constant(v2), constant(random_tensor({2, 2, kD}, 15)), p).value();
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - 2.0 * v2[i]) < 1e-12);
}

TEST_CASE("deformable attention matches a per-token oracle") {
    const std::int64_t K = 2, H = 3, W = 4;
    const auto v2 = random_tensor({1, H, W, kD}, 16);
    const auto text = random_tensor({1, 2, kD}, 17);
    const auto ta = raw_attn(18);
    const auto ow = random_tensor({3 * K, 2 * kD}, 19, -0.6, 0.6), ob = random_tensor({3 * K}, 20, -0.5, 0.5);
    const auto vw = random_tensor({kD, kD}, 21, -0.8, 0.8);
    for (bool with_text : {true, false}) {
        const Tensor t = with_text ? text : Tensor({1, 0, kD});
        DeformParams p{to_params(ta), constant(ow), constant(ob), constant(vw), K};
        const auto out = deformable_text_attention(constant(v2), constant(t), p).value();
        const Tensor grid({H, W, kD}, v2.vec());
        for (std::int64_t u = 0; u < H; ++u)
            for (std::int64_t v = 0; v < W; ++v) {
                const double* q = v2.vec().data() + (u * W + v) * kD;
                std::vector<double> ctx(static_cast<std::size_t>(kD), 0.0);
                if (with_text) ctx = attend(ta, q, {text.vec().data(), text.vec().data() + kD}, kD);
                std::vector<double> in(q, q + kD);
                in.insert(in.end(), ctx.begin(), ctx.end());
                auto head = matvec(ow, in.data());
                for (std::int64_t i = 0; i < 3 * K; ++i) head[i] += ob[i];
                double mx = head[2 * K], z = 0;
                for (std::int64_t k = 0; k < K; ++k) mx = std::max(mx, head[2 * K + k]);
                std::vector<double> a(K);
                for (std::int64_t k = 0; k < K; ++k) z += (a[k] = std::exp(head[2 * K + k] - mx));
                std::vector<double> mixed(static_cast<std::size_t>(kD), 0.0);
                for (std::int64_t k = 0; k < K; ++k)
                    for (std::int64_t ch = 0; ch < kD; ++ch)
                        mixed[ch] += a[k] / z * bilinear_ref(grid, u + head[2 * k], v + head[2 * k + 1], ch);
                const auto proj = matvec(vw, mixed.data());
                for (std::int64_t ch = 0; ch < kD; ++ch)
                    CHECK(std::abs(out[(u * W + v) * kD + ch] - (q[ch] + proj[ch])) < 1e-10);
            }
    }
}

TEST_CASE("temporal attention") {
    const auto a = raw_attn(22);
    const auto p = to_params(a);
    const auto one = random_tensor({1, 3, kD}, 23);
    const auto y1 = temporal_attention(p, constant(one)).value();
    for (std::int64_t n = 0; n < 3; ++n) {
        const auto ref = matvec(a.o, matvec(a.v, one.vec().data() + n * kD).data());
        for (std::int64_t i = 0; i < kD; ++i) CHECK(std::abs(y1[n * kD + i] - one[n * kD + i] - ref[i]) < 1e-12);
    }

    const std::int64_t F = 3, N = 4;
    const auto x = random_tensor({F, N, kD}, 24);
    const auto y = temporal_attention(p, constant(x)).value();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t t = 0; t < F; ++t) {
            std::vector<const double*> ctx;
            for (std::int64_t s = 0; s < F; ++s) ctx.push_back(x.vec().data() + (s * N + n) * kD);
            const auto ref = attend(a, x.vec().data() + (t * N + n) * kD, ctx, kD);
            for (std::int64_t i = 0; i < kD; ++i)
                CHECK(std::abs(y[(t * N + n) * kD + i] - x[(t * N + n) * kD + i] - ref[i]) < 1e-10);
        }

    // Swapping two spatial positions swaps their outputs.
    Tensor xs = x;
    for (std::int64_t t = 0; t < F; ++t)
        for (std::int64_t i = 0; i < kD; ++i) std::swap(xs[(t * N + 0) * kD + i], xs[(t * N + 2) * kD + i]);
    const auto ys = temporal_attention(p, constant(xs)).value();
    for (std::int64_t t = 0; t < F; ++t)
        for (std::int64_t i = 0; i < kD; ++i) {
            CHECK(ys[(t * N + 0) * kD + i] == y[(t * N + 2) * kD + i]);
            CHECK(ys[(t * N + 1) * kD + i] == y[(t * N + 1) * kD + i]);
        }
}

TEST_CASE("spatio-temporal attention") {
    const auto a = raw_attn(25);
    const auto p = to_params(a);
    const std::int64_t N = 3;
    const auto one = random_tensor({1, N, kD}, 26);
    const auto y1 = st_attention(p, constant(one)).value();
    const auto doubled = ad::concat({constant(one), constant(one)}, 1);
    CHECK(max_abs_diff(y1, ad::add(constant(one), attention(p, constant(one), doubled)).value()) < 1e-14);

    const std::int64_t F = 4;
    const auto x = random_tensor({F, N, kD}, 27);
    const auto y = st_attention(p, constant(x)).value();
    for (std::int64_t t = 0; t < F; ++t) {
        const auto prev = std::max<std::int64_t>(t - 1, 0);
        std::vector<const double*> ctx;
        for (std::int64_t n = 0; n < N; ++n) ctx.push_back(x.vec().data() + (0 * N + n) * kD);
        for (std::int64_t n = 0; n < N; ++n) ctx.push_back(x.vec().data() + (prev * N + n) * kD);
        for (std::int64_t n = 0; n < N; ++n) {
            const auto ref = attend(a, x.vec().data() + (t * N + n) * kD, ctx, kD);
            for (std::int64_t i = 0; i < kD; ++i)
                CHECK(std::abs(y[(t * N + n) * kD + i] - x[(t * N + n) * kD + i] - ref[i]) < 1e-10);
        }
    }

    // Frame 3 reads frames 0, 2 and itself only.
    Tensor xm = x;
    for (std::int64_t i = 0; i < N * kD; ++i) xm[1 * N * kD + i] += 1.0;
    const auto ym = st_attention(p, constant(xm)).value();
    for (std::int64_t i = 0; i < N * kD; ++i) {
        CHECK(ym[3 * N * kD + i] == y[3 * N * kD + i]);
        CHECK(ym[0 * N * kD + i] == y[0 * N * kD + i]);
    }
    // Later frames never influence earlier ones.
    Tensor xl = x;
    for (std::int64_t i = 0; i < N * kD; ++i) xl[3 * N * kD + i] -= 0.5;
    const auto yl = st_attention(p, constant(xl)).value();
    for (std::int64_t i = 0; i < 3 * N * kD; ++i) CHECK(yl[i] == y[i]);
}

TEST_CASE("temporal and spatio-temporal attention preserve shape") {
    const auto p = to_params(raw_attn(28));
    for (std::int64_t F : {1, 2, 5})
        for (std::int64_t N : {1, 6}) {
            const auto x = constant(random_tensor({F, N, kD}, 29));
            CHECK(temporal_attention(p, x).shape() == x.shape());
            CHECK(st_attention(p, x).shape() == x.shape());
        }
}

TEST_CASE("full pipeline with zero gate skips the gated stage") {
    ParamStore store;
    init_sfa(store, "sfa/fg", 5, kD, 2, 30);
    Binding b(store);
    const auto p = bind_sfa(b, "sfa/fg", 2, 1.0);
    CHECK(p.gated.gamma.value() == Tensor({1}));
    const auto rays = constant(random_tensor({2, 2, 3, 5}, 31, 0, 1));
    const auto cs = constant(random_tensor({2, 3, kD}, 32));
    const auto ct = constant(random_tensor({2, 2, kD}, 33));
    const auto out = sfa_forward(p, rays, cs, ct).value();

    const auto tokens = ad::reshape(ad::linear(rays, p.v_proj_w, p.v_proj_b), {2, 6, kD});
    const auto v1 = sfa_stage1(p.stage1, tokens);
    const auto v3 = deformable_text_attention(ad::reshape(v1, {2, 2, 3, kD}), ct, p.deform);
    const auto v4 = temporal_attention(p.temporal, ad::reshape(v3, {2, 6, kD}));
    const auto ref = ad::reshape(st_attention(p.st, v4), {2, 2, 3, kD}).value();
    CHECK(out == ref);
}

TEST_CASE("every SFA stage passes a finite-difference check") {
    const auto a = to_params(raw_attn(34));
    const auto w = constant(random_tensor({2, 6, kD}, 35));
    auto reduce = [&](const Var& y) { return ad::sum(ad::mul(y, constant(random_tensor(y.shape(), 36)))); };
    const auto x0 = random_tensor({2, 6, kD}, 37);
    CHECK(grad_check([&](const Var& x) { return reduce(sfa_stage1(a, x)); }, x0, 1e-5) < 1e-5);
    CHECK(grad_check(
              [&](const Var& x) {
                  return reduce(gated_self_attention(x, constant(random_tensor({2, 2, kD}, 38)),
                                                     {constant(Tensor({1}, {0.4})), a}));
              },
              x0, 1e-5) < 1e-5);
    CHECK(grad_check([&](const Var& g) { return reduce(gated_self_attention(w, w, {g, a})); }, Tensor({1}, {0.3}), 1e-5) <
          1e-5);
    const DeformParams dp{a, constant(random_tensor({6, 2 * kD}, 39, -0.3, 0.3)), constant(random_tensor({6}, 40, -0.3, 0.3)),
                          constant(random_tensor({kD, kD}, 41)), 2};
    CHECK(grad_check(
              [&](const Var& x) {
                  return reduce(deformable_text_attention(ad::reshape(x, {2, 2, 3, kD}),
                                                          constant(random_tensor({2, 2, kD}, 42)), dp));
              },
              x0, 1e-5) < 1e-5);
    CHECK(grad_check([&](const Var& x) { return reduce(temporal_attention(a, x)); }, x0, 1e-5) < 1e-5);
    CHECK(grad_check([&](const Var& x) { return reduce(st_attention(a, x)); }, x0, 1e-5) < 1e-5);
}
