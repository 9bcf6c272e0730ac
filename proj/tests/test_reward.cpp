#include <cmath>

#include "doctest.h"
#include "ddfx/errors.hpp"
#include "ddfx/reward.hpp"
#include "helpers.hpp"

using namespace ddfx;
using namespace ddfx::reward;
using testutil::random_normal;
using testutil::random_tensor;

namespace {

struct Stage1 {
    Config cfg = testutil::tiny_config();
    std::vector<scene::SceneClip> clips;
    std::vector<diffusion::ClipInputs> inputs;
    ParamStore params;
    diffusion::NoiseSchedule s;

    Stage1() {
        for (int i = 0; i < 3; ++i) clips.push_back(scene::generate_synthetic_scene(200 + i, cfg.scene));
        for (const auto& c : clips) inputs.push_back(diffusion::prepare_clip(c, cfg));
        diffusion::init_model(params, cfg, 9);
        // Live injections so adapter gradients reach the output through both branches.
        std::uint64_t k = 0;
        const ParamStore snapshot = params;
        for (const auto& [name, t] : snapshot.all())
            if (name.find("/inject") != std::string::npos) params.set(name, random_normal(t.shape(), 300 + ++k, 0.3));
        s = diffusion::make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);
    }
};

}  // namespace

TEST_CASE("temporal features") {
    const FeatureExtractor fx(8, 8);
    CHECK(extract_temporal_features(constant(random_tensor({3, 8, 8, 3}, 1)), fx).shape() == Shape{64});
    CHECK(extract_temporal_features(constant(random_tensor({1, 8, 8, 3}, 2)), fx).shape() == Shape{64});
    CHECK_THROWS_AS(extract_temporal_features(constant(Tensor({2, 8, 4, 3})), fx), ContractError);
    CHECK_THROWS_AS(FeatureExtractor(6, 8), ContractError);
    // Frame order matters: the stack looks at neighbours in time.
    const auto a = random_tensor({2, 8, 8, 3}, 3);
    std::vector<double> swapped(a.vec().begin() + 192, a.vec().end());
    swapped.insert(swapped.end(), a.vec().begin(), a.vec().begin() + 192);
    const auto fa = extract_temporal_features(constant(a), fx).value();
    CHECK(fa == extract_temporal_features(constant(a), fx).value());
    CHECK(max_abs_diff(fa, extract_temporal_features(constant(Tensor({2, 8, 8, 3}, swapped)), fx).value()) > 0.0);
}

TEST_CASE("reward values") {
    const FeatureExtractor fx(8, 8);
    const auto x = random_tensor({2, 8, 8, 3}, 4), v = random_tensor({2, 8, 8, 3}, 5);
    CHECK(reward_i3d(constant(x), constant(x), fx).value().item() == 0.0);
    const double r = reward_i3d(constant(x), constant(v), fx).value().item();
    CHECK(r < 0.0);
    CHECK(r == reward_i3d(constant(v), constant(x), fx).value().item());
    const auto fx0 = extract_temporal_features(constant(x), fx).value(), fv = extract_temporal_features(constant(v), fx).value();
    double ss = 0;
    for (std::size_t i = 0; i < 64; ++i) ss += (fx0[i] - fv[i]) * (fx0[i] - fv[i]);
    CHECK(std::abs(r + std::sqrt(ss)) < 1e-12);
    CHECK_THROWS_AS(reward_i3d(constant(x), constant(Tensor({1, 8, 8, 3})), fx), ContractError);
}

TEST_CASE("reward gradient with respect to the sample") {
    const FeatureExtractor fx(8, 8);
    const auto v = random_tensor({2, 8, 8, 3}, 6);
    const auto x = random_tensor({2, 8, 8, 3}, 7);
    CHECK(grad_check([&](const Var& z) { return reward_i3d(z, constant(v), fx); }, x, 1e-5) < 1e-5);
    // Coinciding features: zero gradient, no NaN.
    Tape tape;
    const Var z = tape.leaf(v);
    const auto g = tape.backward(reward_i3d(z, constant(v), fx));
    for (double e : g.at(z).vec()) CHECK(e == 0.0);
}

TEST_CASE("reward through the sampler chain passes gradient checks") {
    Stage1 m;
    diffusion::init_adapters(m.params, m.cfg, 11);
    const ParamStore snapshot = m.params;
    for (const auto& [name, t] : snapshot.all())
        if (name.rfind("adapters/", 0) == 0 && name.back() == 'B') m.params.set(name, random_normal(t.shape(), 12, 0.3));
    const FeatureExtractor fx(8, 8);
    const auto& in = m.inputs[0];
    for (std::int64_t steps : {1, 2}) {
        INFO(steps);
        auto loss = [&](Binding& b) { return reward_i3d(denoise_with_grad(b, m.cfg, m.s, in, steps, 13), constant(in.x0), fx); };
        CHECK(testutil::directional_grad_check(m.params, diffusion::stage2_trainable, loss, 14) < 1e-4);
    }
    Binding b(m.params);
    CHECK_THROWS_AS(denoise_with_grad(b, m.cfg, m.s, in, 0, 1), ContractError);
}

TEST_CASE("zero-init adapters leave generations unchanged") {
    Stage1 m;
    const auto before = diffusion::generate(m.params, m.cfg, m.inputs[1], 21);
    ParamStore with = m.params;
    diffusion::init_adapters(with, m.cfg, 22);
    CHECK(with.has_group("adapters"));
    CHECK(diffusion::generate(with, m.cfg, m.inputs[1], 21) == before);
}

TEST_CASE("mean reward is deterministic and at most zero") {
    Stage1 m;
    const FeatureExtractor fx(8, 8);
    const double a = mean_reward(m.params, m.cfg, m.inputs, fx, 5);
    CHECK(a == mean_reward(m.params, m.cfg, m.inputs, fx, 5));
    CHECK(a <= 0.0);
    CHECK_THROWS_AS(mean_reward(m.params, m.cfg, {}, fx, 5), ContractError);
}

TEST_CASE("stage-2 training updates adapters only") {
    Stage1 m;
    ParamStore a = m.params, b = m.params;
    const auto ra = train_stage2(m.clips, {m.clips[0], m.clips[1]}, m.cfg, a);
    const auto rb = train_stage2(m.clips, {m.clips[0], m.clips[1]}, m.cfg, b);
    CHECK(a == b);
    CHECK(ra.rewards == rb.rewards);
    CHECK(ra.rewards.size() == 2);
    REQUIRE(ra.eval_curve.size() == 3);
    CHECK(ra.eval_curve[0].first == 0);
    CHECK(ra.eval_curve[2].first == 2);
    for (const auto& g : m.params.groups()) CHECK(a.checksum(g) == m.params.checksum(g));
    CHECK(a.has_group("adapters"));
    ParamStore fresh = m.params;
    diffusion::init_adapters(fresh, m.cfg, m.cfg.seed ^ fnv1a("adapters"));
    CHECK_FALSE(a.checksum("adapters") == fresh.checksum("adapters"));

    std::int64_t calls = 0;
    ParamStore c = m.params;
    train_stage2(m.clips, {}, m.cfg, c, [&](std::int64_t u, double r) {
        CHECK(u == calls++);
        CHECK(r <= 0.0);
    });
    CHECK(calls == m.cfg.reward.updates);
}

TEST_CASE("stage-2 training rejects bad inputs") {
    Stage1 m;
    ParamStore p = m.params;
    CHECK_THROWS_AS(train_stage2({}, {}, m.cfg, p), ContractError);
    ParamStore empty;
    CHECK_THROWS_AS(train_stage2(m.clips, {}, m.cfg, empty), ContractError);
}

TEST_CASE("low-rank adapters") {
    const Tensor w({2, 2}, {0.5, -1, 2, 0.25});
    const Var x = constant(Tensor({1, 2}, {3, 4}));
    const LowRank hand{constant(Tensor({1, 2}, {1, 0})), constant(Tensor({2, 1}, {0, 1})), 1.0};
    const auto base = project({constant(w), {}}, x).value();
    const auto adapted = project({constant(w), hand}, x).value();
    CHECK(adapted[0] == base[0]);
    CHECK(adapted[1] == base[1] + 3.0);

    const LowRank zero_b{constant(random_tensor({1, 2}, 1)), constant(Tensor({2, 1})), 1.0};
    CHECK(project({constant(w), zero_b}, x).value() == base);
    const LowRank zero_s{constant(random_tensor({1, 2}, 2)), constant(random_tensor({2, 1}, 3)), 0.0};
    CHECK(project({constant(w), zero_s}, x).value() == base);

    const AttentionParams p{{constant(w), {}}, {constant(w), {}}, {constant(w), {}}, {constant(w), {}}};
    const LowRank too_wide{constant(Tensor({3, 2})), constant(Tensor({2, 3})), 1.0};
    CHECK_THROWS_AS(apply_low_rank_adapters(p, too_wide, hand, hand, hand), ContractError);
    const auto a = apply_low_rank_adapters(p, hand, hand, hand, hand);
    CHECK(a.value.adapter.has_value());
    CHECK(a.output.adapter.has_value());
}

TEST_CASE("squared feature norm passes a finite-difference check") {
    const FeatureExtractor fx(8, 8);
    for (std::int64_t F : {1, 4}) {
        const auto clip = random_tensor({F, 8, 8, 3}, 40 + F);
        CHECK(grad_check([&](const Var& c) { return ad::sum(ad::square(extract_temporal_features(c, fx))); }, clip, 1e-5) < 1e-5);
    }
}

TEST_CASE("reward gradients reach the adapters at every denoising step") {
    Stage1 m;
    m.cfg.reward.sample_steps = 4;
    diffusion::init_adapters(m.params, m.cfg, 50);
    const ParamStore snapshot = m.params;
    for (const auto& [name, t] : snapshot.all())
        if (name.rfind("adapters/", 0) == 0 && name.back() == 'B') m.params.set(name, random_normal(t.shape(), 51, 0.3));
    const FeatureExtractor fx(8, 8);
    const auto& in = m.inputs[2];
    std::map<std::string, Tensor> dirs;
    std::uint64_t k = 0;
    for (const auto& [name, t] : m.params.all())
        if (diffusion::stage2_trainable(name)) dirs.emplace(name, random_normal(t.shape(), 60 + ++k));

    // One scalar per step moves the adapters along dirs for that step only.
    const auto ts = diffusion::sampling_timesteps(m.cfg.diffusion.steps, m.cfg.reward.sample_steps);
    auto rollout = [&](const std::vector<Var>& alpha) {
        Var z = constant(diffusion::gaussian(in.x0.shape(), 70));
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            Binding b(m.params);
            for (const auto& [name, u] : dirs)
                b.override(name, ad::add(constant(m.params.get(name)),
                                         ad::mul(ad::broadcast_to(ad::reshape(alpha[i], {1}), u.shape()), constant(u))));
            const auto model = diffusion::make_denoiser(b, m.cfg, m.s, in);
            const Var eps = diffusion::cfg_combine(model(z, ts[i], true), model(z, ts[i], false), m.cfg.reward.cfg_scale);
            z = diffusion::ddim_step(z, ts[i], eps, m.s, ts[i + 1]);
        }
        return reward_i3d(z, constant(in.x0), fx);
    };
    Tape tape;
    std::vector<Var> alpha;
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) alpha.push_back(tape.leaf(Tensor({1})));
    const auto g = tape.backward(rollout(alpha));
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        INFO(i);
        const double analytic = g.at(alpha[i])[0];
        CHECK(analytic != 0.0);
        auto shifted = [&](double h) {
            std::vector<Var> a;
            for (std::size_t j = 0; j < alpha.size(); ++j) a.push_back(constant(Tensor({1}, {j == i ? h : 0.0})));
            return rollout(a).value().item();
        };
        const double numeric = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
        CHECK(std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8) < 1e-4);
    }

    // The recorded chain is the production sampler: same seed, same sample.
    Binding b(m.params);
    std::vector<Var> zeros(alpha.size(), constant(Tensor({1})));
    const auto direct = denoise_with_grad(b, m.cfg, m.s, in, m.cfg.reward.sample_steps, 70).value();
    CHECK(reward_i3d(constant(direct), constant(in.x0), fx).value().item() == rollout(zeros).value().item());
}
