#include "ddfx/diffusion.hpp"

#include <cmath>

#include "ddfx/errors.hpp"
#include "ddfx/rng.hpp"
#include "ddfx/sfa.hpp"

namespace ddfx::diffusion {

NoiseSchedule make_schedule(std::int64_t T, double beta_min, double beta_max) {
    if (T < 1) throw ContractError("make_schedule: T must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw ContractError("make_schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T + 1), 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T + 1), 1.0);
    for (std::int64_t t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        const auto i = static_cast<std::size_t>(t);
        s.beta[i] = beta_min + (beta_max - beta_min) * frac;
        s.alpha_bar[i] = s.alpha_bar[i - 1] * (1.0 - s.beta[i]);
    }
    return s;
}

namespace {

double abar(const NoiseSchedule& s, std::int64_t t) {
    if (t < 0 || t > s.T) throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T) + "]");
    return s.alpha_bar[static_cast<std::size_t>(t)];
}

}  // namespace

Tensor forward_diffuse(const Tensor& z0, std::int64_t t, const NoiseSchedule& s, const Tensor& eps) {
    if (z0.shape() != eps.shape())
        throw ContractError("forward_diffuse: shape mismatch " + shape_str(z0.shape()) + " vs " + shape_str(eps.shape()));
    const double a = abar(s, t);
    const double ca = std::sqrt(a), cn = std::sqrt(1.0 - a);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * z0[i] + cn * eps[i];
    return out;
}

Var ddim_step(const Var& z_t, std::int64_t t, const Var& eps_hat, const NoiseSchedule& s, std::int64_t t_prev) {
    if (t < 1) throw ContractError("ddim_step: t = " + std::to_string(t) + " is already denoised");
    if (t_prev < 0) t_prev = t - 1;
    if (t_prev >= t) throw ContractError("ddim_step: t_prev must be < t");
    if (z_t.shape() != eps_hat.shape()) throw ContractError("ddim_step: shape mismatch " + shape_str(z_t.shape()) + " vs " + shape_str(eps_hat.shape()));
    const double a = abar(s, t), ap = abar(s, t_prev);
    const Var z0 = ad::scale(ad::sub(z_t, ad::scale(eps_hat, std::sqrt(1.0 - a))), 1.0 / std::sqrt(a));
    return ad::add(ad::scale(z0, std::sqrt(ap)), ad::scale(eps_hat, std::sqrt(1.0 - ap)));
}

Var cfg_combine(const Var& cond, const Var& uncond, double scale) {
    return ad::add(uncond, ad::scale(ad::sub(cond, uncond), scale));
}

Var fgm_loss(const Var& eps, const Var& eps_hat, const Tensor& mask) {
    const Shape& s = eps.shape();
    if (eps_hat.shape() != s) throw ContractError("fgm_loss: shape mismatch " + shape_str(s) + " vs " + shape_str(eps_hat.shape()));
    Tensor m(s);
    if (mask.shape() == s) {
        m = mask;
    } else {
        const Shape trimmed(s.begin(), s.end() - 1);
        if (s.empty() || mask.shape() != trimmed)
            throw ContractError("fgm_loss: mask shape " + shape_str(mask.shape()) + " does not match " + shape_str(s));
        const std::int64_t c = s.back();
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask[i / static_cast<std::size_t>(c)];
    }
    return ad::mean(ad::mul(constant(std::move(m)), ad::square(ad::sub(eps, eps_hat))));
}

std::vector<std::int64_t> sampling_timesteps(std::int64_t T, std::int64_t S) {
    if (S < 1 || S > T) throw ContractError("sampling steps must be in [1, T]");
    std::vector<std::int64_t> ts;
    for (std::int64_t i = S; i >= 0; --i) ts.push_back(i * T / S);
    return ts;
}

Tensor gaussian(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    for (auto& x : t.data()) x = rng.normal();
    return t;
}

Var sample_from(const Denoiser& model, const Var& z_T, const NoiseSchedule& s, std::int64_t steps, double cfg_scale) {
    const auto ts = sampling_timesteps(s.T, steps);
    Var z = z_T;
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const std::int64_t t = ts[i];
        Var eps = model(z, t, true);
        if (cfg_scale != 1.0) eps = cfg_combine(eps, model(z, t, false), cfg_scale);
        z = ddim_step(z, t, eps, s, ts[i + 1]);
    }
    return z;
}

Var sample(const Denoiser& model, const Shape& shape, const NoiseSchedule& s, std::int64_t steps, double cfg_scale,
           std::uint64_t seed) {
    return sample_from(model, constant(gaussian(shape, seed)), s, steps, cfg_scale);
}

// ---------------------------------------------------------------------------

ClipInputs prepare_clip(const scene::SceneClip& clip, const Config& cfg) {
    clip.validate();
    const auto F = static_cast<std::int64_t>(clip.frames.size());
    const std::int64_t U = cfg.scene.image_height, V = cfg.scene.image_width, N = cfg.model.n_sample;
    ClipInputs in;
    in.clip = &clip;
    in.x0 = Tensor({F, U, V, 3});
    in.rays_fg = Tensor({F, U, V, N});
    in.rays_bg = Tensor({F, U, V, N});
    in.mask = Tensor({F, U, V});
    for (std::int64_t f = 0; f < F; ++f) {
        const auto& fr = clip.frames[static_cast<std::size_t>(f)];
        if (fr.image.height != U || fr.image.width != V || fr.camera.height != U || fr.camera.width != V)
            throw ContractError("prepare_clip: frame size " + std::to_string(fr.image.height) + "x" +
                                std::to_string(fr.image.width) + " does not match config " + std::to_string(U) + "x" +
                                std::to_string(V));
        std::copy(fr.image.data.begin(), fr.image.data.end(), in.x0.data().begin() + f * U * V * 3);
        const auto [g_fg, g_bg] = scene::split_fg_bg(fr.grid);
        const auto rays = ors::cast_rays(fr.camera, cfg.model.ray_step, N);
        const auto vf = ors::ors_project(g_fg, rays, ors::Source::foreground);
        const auto vb = ors::ors_project(g_bg, rays, ors::Source::background);
        std::copy(vf.values.data().begin(), vf.values.data().end(), in.rays_fg.data().begin() + f * U * V * N);
        std::copy(vb.values.data().begin(), vb.values.data().end(), in.rays_bg.data().begin() + f * U * V * N);
        const auto m = ors::rasterize_fgm_mask(fr.boxes, fr.camera, U, V, cfg.model.lambda_fg);
        std::copy(m.weights.data().begin(), m.weights.data().end(), in.mask.data().begin() + f * U * V);
    }
    const std::int64_t k = cfg.model.token_pool;
    in.pooled_fg = ad::avg_pool(constant(in.rays_fg), k).value();
    in.pooled_bg = ad::avg_pool(constant(in.rays_bg), k).value();
    return in;
}

namespace {

constexpr const char* kBranches[] = {"fg", "bg"};

encoders::EncoderDims encoder_dims(const Config& cfg) {
    return {cfg.model.d, cfg.model.d_cat, {cfg.model.fourier_frequencies, cfg.model.fourier_base}};
}

std::int64_t temb_width(const Config& cfg) { return 2 * cfg.model.fourier_frequencies; }

}  // namespace

void init_model(ParamStore& store, const Config& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto& m = cfg.model;
    const std::int64_t cb = m.base_width, w = m.branch_width, te = temb_width(cfg);
    encoders::init_encoders(store, encoder_dims(cfg), seed);

    init_conv(store, "base/conv_in", 3, cb, seed);
    init_dense(store, "base/t0", te, cb, seed);
    init_dense(store, "base/down", cb, 2 * cb, seed);
    init_dense(store, "base/t1", te, 2 * cb, seed);
    init_dense(store, "base/text", m.d, 2 * cb, seed);
    init_attention(store, "base/attn", 2 * cb, seed);
    init_dense(store, "base/up1", 2 * cb, cb, seed);
    init_dense(store, "base/head", cb, 3, seed);

    for (const char* br : kBranches) {
        const std::string p = std::string("branches/") + br;
        init_dense(store, p + "/v_in", m.n_sample, w, seed);
        init_conv(store, p + "/z_in", 3, w, seed);
        init_dense(store, p + "/v_mid", w, w, seed);
        init_dense(store, p + "/t0", te, w, seed);
        init_zero_dense(store, p + "/inject0", w, cb);
        init_dense(store, p + "/sfa_in", m.d, w, seed);
        init_dense(store, p + "/down", w, w, seed);
        init_dense(store, p + "/t1", te, w, seed);
        init_zero_dense(store, p + "/inject1", w, 2 * cb);
        sfa::init_sfa(store, std::string("sfa/") + br, m.n_sample, m.d, m.deform_points, seed);
    }
}

std::vector<std::string> attention_blocks() {
    std::vector<std::string> out{"base/attn"};
    for (const char* br : kBranches)
        for (auto& name : sfa::sfa_attention_blocks(std::string("sfa/") + br)) out.push_back(name);
    return out;
}

void init_adapters(ParamStore& store, const Config& cfg, std::uint64_t seed) {
    const AdapterConfig ac{cfg.reward.rank, cfg.reward.scale};
    for (const auto& block : attention_blocks()) {
        const std::int64_t width = store.get(block + "/q").dim(0);
        init_attention_adapters(store, block, width, ac, seed);
    }
}

bool stage1_trainable(const std::string& name) {
    const auto g = ParamStore::group_of(name);
    if (g == "encoders") return encoders::encoder_trainable(name);
    return g == "branches" || g == "sfa";
}

bool stage2_trainable(const std::string& name) { return ParamStore::group_of(name) == "adapters"; }

encoders::ConditionBundle encode_clip(Binding& b, const scene::SceneClip& clip, const Config& cfg) {
    const auto dims = encoder_dims(cfg);
    const encoders::EmbeddingTable table;
    const auto F = static_cast<std::int64_t>(clip.frames.size());
    const std::int64_t d = dims.d;

    std::vector<Var> cams;
    for (const auto& fr : clip.frames) cams.push_back(encoders::encode_camera(b, fr.camera, dims));
    const Var c_cam = ad::reshape(F == 1 ? cams[0] : ad::concat(cams, 0), {F, 1, d});

    auto per_clip = [&](const Var& tokens) {
        const std::int64_t n = tokens.shape()[0];
        if (n == 0) return encoders::empty_tokens({F}, d);
        return ad::broadcast_to(ad::reshape(tokens, {1, n, d}), {F, n, d});
    };
    const Var c_text = per_clip(encoders::encode_text(b, clip.caption, table, dims));
    const Var c_map = per_clip(encoders::encode_map(b, clip.map, table, dims));

    scene::BoxSet all;
    const std::size_t nb = clip.frames[0].boxes.size();
    for (const auto& fr : clip.frames) {
        if (fr.boxes.size() != nb) throw ContractError("encode_clip: box count differs between frames");
        all.insert(all.end(), fr.boxes.begin(), fr.boxes.end());
    }
    const Var c_box = nb == 0 ? encoders::empty_tokens({F}, d)
                              : ad::reshape(encoders::encode_boxes(b, all, table, dims),
                                            {F, static_cast<std::int64_t>(nb), d});
    return encoders::assemble_conditions(c_cam, c_text, c_box, c_map);
}

encoders::ConditionBundle null_conditions(Binding& b, std::int64_t frames, const Config& cfg) {
    const std::int64_t d = cfg.model.d;
    auto tok = [&](const char* name) { return ad::broadcast_to(ad::reshape(b(name), {1, 1, d}), {frames, 1, d}); };
    return encoders::assemble_conditions(tok("encoders/null/cam"), encoders::empty_tokens({frames}, d),
                                         tok("encoders/null/box"), tok("encoders/null/map"));
}

namespace {

Var token_range(const Var& tokens, std::int64_t begin, std::int64_t end) {
    if (begin == end) return encoders::empty_tokens({tokens.shape()[0]}, tokens.shape()[2]);
    return ad::slice(tokens, 1, begin, end);
}

Var channel_bias(const Var& v, const Shape& shape) {
    Shape s(shape.size(), 1);
    s.back() = v.shape().back();
    if (v.shape()[0] != 1) s[0] = v.shape()[0];
    return ad::broadcast_to(ad::reshape(v, s), shape);
}

struct Residuals {
    Var r0, r1;
};

Residuals branch_forward(Binding& b, const Config& cfg, const std::string& br, const Var& z, const Var& temb,
                         const Var& c, std::int64_t n_txt, const Tensor& rays, const Tensor& pooled) {
    const std::string p = "branches/" + br;
    const std::int64_t n = c.shape()[1];
    const Var cam = token_range(c, 0, 1);
    const Var text = token_range(c, 1, 1 + n_txt);
    const Var spatial = encoders::concat_tokens({token_range(c, 1 + n_txt, n), cam});
    const auto sp = sfa::bind_sfa(b, "sfa/" + br, cfg.model.deform_points, cfg.reward.scale);
    const Var fused = sfa::sfa_forward(sp, constant(pooled), spatial, text);

    const Var hv = ad::silu(dense(b, p + "/v_in", constant(rays)));
    const Var zin = conv(b, p + "/z_in", z);
    const Var e0 = ad::silu(ad::add(ad::add(zin, dense(b, p + "/v_mid", hv)),
                                    channel_bias(dense(b, p + "/t0", temb), zin.shape())));
    const Var r0 = dense(b, p + "/inject0", e0);

    const Var down = dense(b, p + "/down", ad::avg_pool(e0, 2));
    const Var up = ad::upsample_nearest(dense(b, p + "/sfa_in", fused), cfg.model.token_pool / 2);
    const Var e1 = ad::silu(ad::add(ad::add(down, up), channel_bias(dense(b, p + "/t1", temb), down.shape())));
    return {r0, dense(b, p + "/inject1", e1)};
}

}  // namespace

Var predict_noise(Binding& b, const Config& cfg, const NoiseSchedule& s, const Var& z_t, std::int64_t t,
                  const encoders::ConditionBundle& cond, const ClipInputs& in, DenoiseOptions opt) {
    const Shape& zs = z_t.shape();
    if (zs.size() != 4 || zs[3] != 3 || zs != in.x0.shape())
        throw ContractError("predict_noise: latent shape " + shape_str(zs) + " does not match clip " +
                            shape_str(in.x0.shape()));
    if (cond.width() != cfg.model.d)
        throw ContractError("predict_noise: condition width " + std::to_string(cond.width()) + " != model width " +
                            std::to_string(cfg.model.d));
    if (t < 1 || t > s.T) throw ContractError("predict_noise: timestep out of range");
    const std::int64_t F = zs[0];
    const double tt = static_cast<double>(t) / static_cast<double>(s.T);
    auto te = encoders::fourier_embed(std::span(&tt, 1), {cfg.model.fourier_frequencies, cfg.model.fourier_base});
    const Var temb = constant(Tensor({1, temb_width(cfg)}, std::move(te)));
    const std::int64_t n_txt = cond.tokens(cond.c_text);

    // Frozen base encoder path.
    const Var cin = conv(b, "base/conv_in", z_t);
    const Var h0 = ad::silu(ad::add(cin, channel_bias(dense(b, "base/t0", temb), cin.shape())));
    const Var down = dense(b, "base/down", ad::avg_pool(h0, 2));
    const std::int64_t c2 = down.shape()[3];
    const Var text_mean = n_txt == 0 ? constant(Tensor({F, cfg.model.d})) : ad::mean_axis(cond.c_text, 1);
    const Var text = channel_bias(dense(b, "base/text", text_mean), down.shape());
    const Var h1 = ad::silu(ad::add(ad::add(down, channel_bias(dense(b, "base/t1", temb), down.shape())), text));
    const Var h2 = ad::avg_pool(h1, 2);
    const Shape s2 = h2.shape();
    const Var tok = ad::reshape(h2, {F, s2[1] * s2[2], c2});
    const Var mid = ad::reshape(ad::add(tok, sfa::self_attention(bind_attention(b, "base/attn", cfg.reward.scale), tok)), s2);

    Var u1_in = ad::add(ad::upsample_nearest(mid, 2), h1);
    Var r0_sum;
    if (opt.branches) {
        for (const char* br : kBranches) {
            const bool fg = std::string(br) == "fg";
            const Residuals r = branch_forward(b, cfg, br, z_t, temb, fg ? cond.c_fg : cond.c_bg, n_txt,
                                               fg ? in.rays_fg : in.rays_bg, fg ? in.pooled_fg : in.pooled_bg);
            u1_in = ad::add(u1_in, r.r1);
            r0_sum = r0_sum.defined() ? ad::add(r0_sum, r.r0) : r.r0;
        }
    }
    const Var u1 = ad::silu(dense(b, "base/up1", u1_in));
    Var u0_in = ad::add(ad::upsample_nearest(u1, 2), h0);
    if (r0_sum.defined()) u0_in = ad::add(u0_in, r0_sum);
    const Var out = dense(b, "base/head", u0_in);

    // Preconditioned output: eps_hat = a z_t + c F with bounded coefficients.
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const double sd = cfg.model.sigma_data;
    const double sig = std::sqrt((1.0 - ab) / ab);
    const double denom = sig * sig + sd * sd;
    const double ca = sig / (std::sqrt(ab) * denom);
    const double cf = -sd / std::sqrt(denom);
    return ad::add(ad::scale(z_t, ca), ad::scale(out, cf));
}

Denoiser make_denoiser(Binding& b, const Config& cfg, const NoiseSchedule& s, const ClipInputs& in) {
    auto cond = std::make_shared<encoders::ConditionBundle>(encode_clip(b, *in.clip, cfg));
    auto uncond = std::make_shared<encoders::ConditionBundle>(null_conditions(b, in.x0.dim(0), cfg));
    return [&b, &cfg, &s, &in, cond, uncond](const Var& z, std::int64_t t, bool conditional) {
        return predict_noise(b, cfg, s, z, t, conditional ? *cond : *uncond, in);
    };
}

Tensor generate(const ParamStore& params, const Config& cfg, const ClipInputs& in, std::uint64_t seed) {
    Binding b(params);
    const auto s = make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);
    const auto model = make_denoiser(b, cfg, s, in);
    return sample(model, in.x0.shape(), s, cfg.diffusion.sample_steps, cfg.diffusion.cfg_scale, seed).value();
}

double window_mean(const std::vector<double>& xs, std::size_t begin, std::size_t end) {
    end = std::min(end, xs.size());
    if (begin >= end) throw ContractError("window_mean: empty window");
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += xs[i];
    return acc / static_cast<double>(end - begin);
}

Stage1Result train_stage1(const std::vector<scene::SceneClip>& data, const Config& cfg, ParamStore& params,
                          const StepCallback& on_step) {
    if (data.empty()) throw ContractError("train_stage1: empty dataset");
    cfg.validate();
    const auto s = make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);
    std::vector<ClipInputs> inputs;
    inputs.reserve(data.size());
    for (const auto& clip : data) inputs.push_back(prepare_clip(clip, cfg));

    Rng rng(cfg.seed ^ fnv1a("train_stage1"));
    Adam opt({cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.eps});
    Stage1Result res;
    for (std::int64_t step = 0; step < cfg.train.steps; ++step) {
        Tape tape;
        Binding b(params, tape, stage1_trainable);
        Var total;
        for (std::int64_t k = 0; k < cfg.train.batch; ++k) {
            const auto& in = inputs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(inputs.size()) - 1))];
            const std::int64_t t = rng.uniform_int(1, s.T);
            Tensor eps(in.x0.shape());
            for (auto& e : eps.data()) e = rng.normal();
            const bool drop = rng.uniform() < cfg.model.cond_dropout;
            const auto cond = drop ? null_conditions(b, in.x0.dim(0), cfg) : encode_clip(b, *in.clip, cfg);
            const Var z_t = constant(forward_diffuse(in.x0, t, s, eps));
            const Var eps_hat = predict_noise(b, cfg, s, z_t, t, cond, in);
            const Var loss = fgm_loss(constant(std::move(eps)), eps_hat, in.mask);
            total = total.defined() ? ad::add(total, loss) : loss;
        }
        total = ad::scale(total, 1.0 / static_cast<double>(cfg.train.batch));
        const auto grads = b.gradients(tape.backward(total));
        opt.step(params, grads);
        const double l = total.value().item();
        res.losses.push_back(l);
        if (on_step) on_step(step, l);
    }
    return res;
}

}  // namespace ddfx::diffusion
