#include "ddfx/reward.hpp"

#include <cmath>

#include "ddfx/errors.hpp"
#include "ddfx/metrics.hpp"
#include "ddfx/rng.hpp"

namespace ddfx::reward {

FeatureExtractor::FeatureExtractor(std::int64_t height, std::int64_t width, std::uint64_t seed)
    : height_(height), width_(width) {
    if (height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4)
        throw ContractError("temporal features: image size must be a positive multiple of 4");
    const std::int64_t flat = (height / 4) * (width / 4) * 8;
    conv_w_ = init_normal({8, 3, 3, 9}, 1.0 / std::sqrt(81.0), seed, "i3d/conv");
    conv_b_ = init_normal({8}, 0.1, seed, "i3d/conv_b");
    lin_w_ = init_normal({64, flat}, 1.0 / std::sqrt(static_cast<double>(flat)), seed, "i3d/linear");
    lin_b_ = Tensor({64});
}

Var extract_temporal_features(const Var& clip, const FeatureExtractor& fx) {
    const Shape& s = clip.shape();
    if (s.size() != 4 || s[1] != fx.height_ || s[2] != fx.width_ || s[3] != 3)
        throw ContractError("temporal features: expected [F, " + std::to_string(fx.height_) + ", " +
                            std::to_string(fx.width_) + ", 3], got " + shape_str(s));
    const std::int64_t F = s[0];
    const Var zero = constant(Tensor({1, s[1], s[2], 3}));
    const Var prev = F == 1 ? zero : ad::concat({zero, ad::slice(clip, 0, 0, F - 1)}, 0);
    const Var next = F == 1 ? zero : ad::concat({ad::slice(clip, 0, 1, F), zero}, 0);
    Var h = ad::conv3x3(ad::concat({prev, clip, next}, 3), constant(fx.conv_w_));
    h = ad::silu(ad::add(h, ad::broadcast_to(constant(fx.conv_b_), h.shape())));
    h = ad::mean_axis(ad::avg_pool(h, 4), 0);
    h = ad::reshape(h, {1, numel(h.shape())});
    return ad::reshape(ad::linear(h, constant(fx.lin_w_), constant(fx.lin_b_)), {64});
}

Var reward_i3d(const Var& x0, const Var& v, const FeatureExtractor& fx) {
    if (x0.shape() != v.shape())
        throw ContractError("reward_i3d: shape mismatch " + shape_str(x0.shape()) + " vs " + shape_str(v.shape()));
    const Var diff = ad::sub(extract_temporal_features(x0, fx), extract_temporal_features(v, fx));
    const Var ss = ad::sum(ad::square(diff));
    const double n = std::sqrt(ss.value().item());
    return record_op("neg_norm", Tensor::scalar(-n), {ss},
                     [n](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                         if (gin[0] && n > 0.0) (*gin[0])[0] += -0.5 / n * g[0];
                     });
}

double fvd_analog(const std::vector<Tensor>& generated, const std::vector<Tensor>& reference,
                  const FeatureExtractor& fx) {
    if (generated.size() < 2 || reference.size() < 2) throw ContractError("fvd_analog: need at least 2 clips per side");
    auto feats = [&](const std::vector<Tensor>& clips) {
        std::vector<Tensor> rows;
        for (const auto& c : clips) rows.push_back(extract_temporal_features(constant(c), fx).value());
        return metrics::gaussian_stats(metrics::stack_rows(rows));
    };
    return metrics::frechet_distance(feats(generated), feats(reference));
}

Var denoise_with_grad(Binding& b, const Config& cfg, const diffusion::NoiseSchedule& s,
                      const diffusion::ClipInputs& in, std::int64_t steps, std::uint64_t seed) {
    if (steps < 1) throw ContractError("denoise_with_grad: steps must be >= 1");
    const auto model = diffusion::make_denoiser(b, cfg, s, in);
    return diffusion::sample(model, in.x0.shape(), s, steps, cfg.reward.cfg_scale, seed);
}

double mean_reward(const ParamStore& params, const Config& cfg, const std::vector<diffusion::ClipInputs>& clips,
                   const FeatureExtractor& fx, std::uint64_t seed_base) {
    if (clips.empty()) throw ContractError("mean_reward: no clips");
    const auto s = diffusion::make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);
    double acc = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        Binding b(params);
        const Var x0 = denoise_with_grad(b, cfg, s, clips[i], cfg.reward.sample_steps, seed_base + i);
        acc += reward_i3d(x0, constant(clips[i].x0), fx).value().item();
    }
    return acc / static_cast<double>(clips.size());
}

Stage2Result train_stage2(const std::vector<scene::SceneClip>& data, const std::vector<scene::SceneClip>& eval_set,
                          const Config& cfg, ParamStore& params, const UpdateCallback& on_update) {
    if (data.empty()) throw ContractError("train_stage2: empty dataset");
    for (const char* g : {"encoders", "base", "branches", "sfa"})
        if (!params.has_group(g)) throw ContractError(std::string("train_stage2: checkpoint lacks stage-1 group ") + g);
    cfg.validate();
    if (!params.has_group("adapters")) diffusion::init_adapters(params, cfg, cfg.seed ^ fnv1a("adapters"));

    std::map<std::string, std::uint64_t> frozen;
    for (const auto& g : params.groups())
        if (g != "adapters") frozen[g] = params.checksum(g);

    const auto s = diffusion::make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);
    const FeatureExtractor fx(cfg.scene.image_height, cfg.scene.image_width);
    std::vector<diffusion::ClipInputs> train_in, eval_in;
    for (const auto& c : data) train_in.push_back(diffusion::prepare_clip(c, cfg));
    for (const auto& c : eval_set) eval_in.push_back(diffusion::prepare_clip(c, cfg));
    const std::uint64_t eval_seed = cfg.seed ^ fnv1a("reward_eval");

    Stage2Result res;
    auto evaluate = [&](std::int64_t u) {
        if (!eval_in.empty()) res.eval_curve.emplace_back(u, mean_reward(params, cfg, eval_in, fx, eval_seed));
    };
    evaluate(0);

    Rng rng(cfg.seed ^ fnv1a("train_stage2"));
    Adam opt({cfg.reward.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.eps});
    for (std::int64_t u = 0; u < cfg.reward.updates; ++u) {
        std::map<std::string, Tensor> grads;
        double mean_r = 0.0;
        for (std::int64_t k = 0; k < cfg.reward.clips_per_update; ++k) {
            const auto& in = train_in[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(train_in.size()) - 1))];
            const std::uint64_t seed = rng.next_u64();
            Tape tape;
            Binding b(params, tape, diffusion::stage2_trainable);
            const Var x0 = denoise_with_grad(b, cfg, s, in, cfg.reward.sample_steps, seed);
            const Var r = reward_i3d(x0, constant(in.x0), fx);
            mean_r += r.value().item();
            for (auto& [name, g] : b.gradients(tape.backward(ad::neg(r)))) {
                auto [it, fresh] = grads.try_emplace(name, g);
                if (!fresh)
                    for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
            }
        }
        const double inv = 1.0 / static_cast<double>(cfg.reward.clips_per_update);
        for (auto& [_, g] : grads)
            for (auto& x : g.data()) x *= inv;
        opt.step(params, grads);
        mean_r *= inv;
        res.rewards.push_back(mean_r);
        if (on_update) on_update(u, mean_r);
        if ((u + 1) % cfg.reward.eval_every == 0 || u + 1 == cfg.reward.updates) evaluate(u + 1);
    }

    for (const auto& [g, sum] : frozen)
        if (params.checksum(g) != sum) throw ContractError("train_stage2: frozen group " + g + " changed");
    return res;
}

}  // namespace ddfx::reward
