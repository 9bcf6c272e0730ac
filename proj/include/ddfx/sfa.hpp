#pragma once

#include <cstdint>
#include <string>

#include "ddfx/nn.hpp"

// Semantic fusion attention over ray-feature tokens, plus the temporal and
// spatio-temporal attention used for clips. Single head throughout.

namespace ddfx::sfa {

struct GatedFusionParams {
    Var gamma;  // [1]
    AttentionParams attn;
};

struct DeformParams {
    AttentionParams text;  // queries over c_text
    Var offset_w;          // [3 Kp, 2d]: Kp (row, col) offsets then Kp logits
    Var offset_b;          // [3 Kp]
    Var value_w;           // [d, d]
    std::int64_t points = 4;
};

/// tokens [N, d] or [B, N, d]; same shape out, no residual.
Var self_attention(const AttentionParams& p, const Var& tokens);

/// V + SelfAttn(V).
Var sfa_stage1(const AttentionParams& p, const Var& v);

/// V1 + tanh(gamma) * SelfAttn([V1 ; c_spatial]) at the visual positions.
/// v1 [B, N, d], c_spatial [B, M, d] with M >= 0.
Var gated_self_attention(const Var& v1, const Var& c_spatial, const GatedFusionParams& p);

/// v2 [B, H, W, d], c_text [B, N_txt, d] -> [B, H, W, d].
Var deformable_text_attention(const Var& v2, const Var& c_text, const DeformParams& p);

/// frames [F, N, d]: per position, residual attention across time.
Var temporal_attention(const AttentionParams& p, const Var& frames);

/// frames [F, N, d]: frame t attends to [frame 0 ; frame max(t-1, 0)], residual.
Var st_attention(const AttentionParams& p, const Var& frames);

/// Parameters of the full pipeline under prefix (sfa/fg or sfa/bg).
struct SfaParams {
    Var v_proj_w, v_proj_b;  // N_sample -> d
    AttentionParams stage1;
    GatedFusionParams gated;
    DeformParams deform;
    AttentionParams temporal;
    AttentionParams st;
};

void init_sfa(ParamStore& store, const std::string& prefix, std::int64_t n_sample, std::int64_t d,
              std::int64_t points, std::uint64_t seed);
SfaParams bind_sfa(Binding& b, const std::string& prefix, std::int64_t points, double adapter_scale);

/// Attention blocks under prefix that accept adapters.
std::vector<std::string> sfa_attention_blocks(const std::string& prefix);

/// ray features [F, h, w, N_sample] (already pooled to token resolution),
/// c_spatial [F, M, d], c_text [F, N_txt, d] -> [F, h, w, d].
Var sfa_forward(const SfaParams& p, const Var& rays, const Var& c_spatial, const Var& c_text);

}  // namespace ddfx::sfa
