#include "ddfx/sfa.hpp"

#include <cmath>

#include "ddfx/errors.hpp"

namespace ddfx::sfa {

Var self_attention(const AttentionParams& p, const Var& tokens) {
    const Shape& s = tokens.shape();
    if (s.size() == 2) {
        const Var t = ad::reshape(tokens, {1, s[0], s[1]});
        return ad::reshape(attention(p, t, t), s);
    }
    if (s.size() != 3) throw ContractError("self_attention: expected [N, d] or [B, N, d], got " + shape_str(s));
    return attention(p, tokens, tokens);
}

Var sfa_stage1(const AttentionParams& p, const Var& v) { return ad::add(v, self_attention(p, v)); }

Var gated_self_attention(const Var& v1, const Var& c_spatial, const GatedFusionParams& p) {
    const Shape& sv = v1.shape();
    const Shape& sc = c_spatial.shape();
    if (sv.size() != 3 || sc.size() != 3 || sv[0] != sc[0] || sv[2] != sc[2])
        throw ContractError("gated_self_attention: shape mismatch " + shape_str(sv) + " vs " + shape_str(sc));
    const Var context = sc[1] == 0 ? v1 : ad::concat({v1, c_spatial}, 1);
    const Var a = attention(p.attn, v1, context);
    const Var gate = ad::broadcast_to(ad::tanh(p.gamma), sv);
    return ad::add(v1, ad::mul(gate, a));
}

Var deformable_text_attention(const Var& v2, const Var& c_text, const DeformParams& p) {
    const Shape& s = v2.shape();
    const Shape& st = c_text.shape();
    if (s.size() != 4 || st.size() != 3 || st[0] != s[0] || st[2] != s[3])
        throw ContractError("deformable_text_attention: shape mismatch " + shape_str(s) + " vs " + shape_str(st));
    const std::int64_t B = s[0], H = s[1], W = s[2], d = s[3], N = H * W, K = p.points;
    if (p.offset_w.shape() != Shape{3 * K, 2 * d})
        throw ContractError("deformable_text_attention: offset head " + shape_str(p.offset_w.shape()) +
                            " does not match width " + std::to_string(d));

    const Var q = ad::reshape(v2, {B, N, d});
    const Var ctx = st[1] == 0 ? constant(Tensor({B, N, d})) : attention(p.text, q, c_text);
    const Var head = ad::linear(ad::concat({q, ctx}, 2), p.offset_w, p.offset_b);
    const Var offsets = ad::slice(head, 2, 0, 2 * K);
    const Var weights = ad::softmax(ad::slice(head, 2, 2 * K, 3 * K));

    // Reference point of token (u, v) is (u + 0.5, v + 0.5); with cell centers at
    // half-integers that is grid coordinate (u, v).
    Tensor ref({N * K, 2});
    for (std::int64_t u = 0; u < H; ++u)
        for (std::int64_t v = 0; v < W; ++v)
            for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t row = (u * W + v) * K + k;
                ref[static_cast<std::size_t>(2 * row)] = static_cast<double>(u);
                ref[static_cast<std::size_t>(2 * row + 1)] = static_cast<double>(v);
            }
    const Var refv = constant(std::move(ref));

    std::vector<Var> out;
    for (std::int64_t b = 0; b < B; ++b) {
        const Var grid = ad::reshape(ad::slice(v2, 0, b, b + 1), {H, W, d});
        const Var coords = ad::add(ad::reshape(ad::slice(offsets, 0, b, b + 1), {N * K, 2}), refv);
        const Var samples = ad::reshape(ad::bilinear_sample(grid, coords), {N, K, d});
        const Var wb = ad::reshape(ad::slice(weights, 0, b, b + 1), {N, 1, K});
        out.push_back(ad::reshape(ad::bmm(wb, samples), {1, H, W, d}));
    }
    const Var mixed = out.size() == 1 ? out[0] : ad::concat(out, 0);
    return ad::add(v2, ad::linear(mixed, p.value_w));
}

Var temporal_attention(const AttentionParams& p, const Var& frames) {
    const Shape& s = frames.shape();
    if (s.size() != 3) throw ContractError("temporal_attention: expected [F, N, d], got " + shape_str(s));
    const Var per_pos = ad::permute(frames, {1, 0, 2});
    const Var a = attention(p, per_pos, per_pos);
    return ad::add(frames, ad::permute(a, {1, 0, 2}));
}

Var st_attention(const AttentionParams& p, const Var& frames) {
    const Shape& s = frames.shape();
    if (s.size() != 3) throw ContractError("st_attention: expected [F, N, d], got " + shape_str(s));
    const std::int64_t F = s[0];
    const Var first = ad::slice(frames, 0, 0, 1);
    std::vector<Var> keys;
    for (std::int64_t t = 0; t < F; ++t) {
        const std::int64_t prev = std::max<std::int64_t>(t - 1, 0);
        keys.push_back(ad::concat({first, ad::slice(frames, 0, prev, prev + 1)}, 1));
    }
    const Var context = F == 1 ? keys[0] : ad::concat(keys, 0);
    return ad::add(frames, attention(p, frames, context));
}

void init_sfa(ParamStore& store, const std::string& prefix, std::int64_t n_sample, std::int64_t d,
              std::int64_t points, std::uint64_t seed) {
    if (points < 1) throw ConfigError("sfa: deformable points must be >= 1");
    init_dense(store, prefix + "/v_proj", n_sample, d, seed);
    init_attention(store, prefix + "/stage1", d, seed);
    init_attention(store, prefix + "/gated", d, seed);
    store.add(prefix + "/gated/gamma", Tensor({1}));
    init_attention(store, prefix + "/text", d, seed);
    init_dense(store, prefix + "/offset", 2 * d, 3 * points, seed, 0.1);
    store.add(prefix + "/value", init_normal({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed, prefix + "/value"));
    init_attention(store, prefix + "/temporal", d, seed);
    init_attention(store, prefix + "/st", d, seed);
}

std::vector<std::string> sfa_attention_blocks(const std::string& prefix) {
    return {prefix + "/stage1", prefix + "/gated", prefix + "/text", prefix + "/temporal", prefix + "/st"};
}

SfaParams bind_sfa(Binding& b, const std::string& prefix, std::int64_t points, double adapter_scale) {
    SfaParams p;
    p.v_proj_w = b(prefix + "/v_proj/w");
    p.v_proj_b = b(prefix + "/v_proj/b");
    p.stage1 = bind_attention(b, prefix + "/stage1", adapter_scale);
    p.gated = {b(prefix + "/gated/gamma"), bind_attention(b, prefix + "/gated", adapter_scale)};
    p.deform = {bind_attention(b, prefix + "/text", adapter_scale), b(prefix + "/offset/w"), b(prefix + "/offset/b"),
                b(prefix + "/value"), points};
    p.temporal = bind_attention(b, prefix + "/temporal", adapter_scale);
    p.st = bind_attention(b, prefix + "/st", adapter_scale);
    return p;
}

Var sfa_forward(const SfaParams& p, const Var& rays, const Var& c_spatial, const Var& c_text) {
    const Shape& s = rays.shape();
    if (s.size() != 4) throw ContractError("sfa_forward: expected [F, h, w, N_sample], got " + shape_str(s));
    const std::int64_t F = s[0], h = s[1], w = s[2];
    const std::int64_t d = p.v_proj_w.shape()[0];
    const Var tokens = ad::reshape(ad::linear(rays, p.v_proj_w, p.v_proj_b), {F, h * w, d});
    const Var v1 = sfa_stage1(p.stage1, tokens);
    const Var v2 = gated_self_attention(v1, c_spatial, p.gated);
    const Var v3 = deformable_text_attention(ad::reshape(v2, {F, h, w, d}), c_text, p.deform);
    const Var v4 = temporal_attention(p.temporal, ad::reshape(v3, {F, h * w, d}));
    return ad::reshape(st_attention(p.st, v4), {F, h, w, d});
}

}  // namespace ddfx::sfa
