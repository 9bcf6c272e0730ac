#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ddfx/config.hpp"
#include "ddfx/encoders.hpp"
#include "ddfx/nn.hpp"
#include "ddfx/ors.hpp"
#include "ddfx/scene.hpp"

// Noise schedule, DDIM sampling with classifier-free guidance, the foreground
// weighted loss and the dual-branch denoiser (frozen base plus foreground and
// background control branches injecting residuals into the base decoder).

namespace ddfx::diffusion {

struct NoiseSchedule {
    std::int64_t T = 0;
    std::vector<double> beta;       // index 1..T; beta[0] = 0
    std::vector<double> alpha_bar;  // index 0..T; alpha_bar[0] = 1
};

/// Linear beta ramp from beta_min (t = 1) to beta_max (t = T).
NoiseSchedule make_schedule(std::int64_t T, double beta_min, double beta_max);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor forward_diffuse(const Tensor& z0, std::int64_t t, const NoiseSchedule& s, const Tensor& eps);

/// Deterministic step from t to t_prev (default t - 1).
Var ddim_step(const Var& z_t, std::int64_t t, const Var& eps_hat, const NoiseSchedule& s, std::int64_t t_prev = -1);

/// uncond + scale (cond - uncond).
Var cfg_combine(const Var& cond, const Var& uncond, double scale);

/// mean(m * (eps - eps_hat)^2). mask has the shape of eps or of eps without
/// its trailing channel axis.
Var fgm_loss(const Var& eps, const Var& eps_hat, const Tensor& mask);

/// Timesteps visited by an S-step sampler, descending, ending at 0.
std::vector<std::int64_t> sampling_timesteps(std::int64_t T, std::int64_t S);

using Denoiser = std::function<Var(const Var& z, std::int64_t t, bool conditional)>;

/// Starts from seeded unit noise of the given shape and runs S guided DDIM
/// steps. Differentiable if the denoiser records on a tape.
Var sample(const Denoiser& model, const Shape& shape, const NoiseSchedule& s, std::int64_t steps, double cfg_scale,
           std::uint64_t seed);
/// Same, from a given z_T.
Var sample_from(const Denoiser& model, const Var& z_T, const NoiseSchedule& s, std::int64_t steps, double cfg_scale);

/// Unit Gaussian tensor from Rng(seed).
Tensor gaussian(const Shape& shape, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dual-branch model

/// Constant per-clip inputs: targets, ray features and loss mask.
struct ClipInputs {
    const scene::SceneClip* clip = nullptr;
    Tensor x0;           // [F, U, V, 3]
    Tensor rays_fg;      // [F, U, V, N_sample]
    Tensor rays_bg;
    Tensor pooled_fg;    // [F, U/k, V/k, N_sample]
    Tensor pooled_bg;
    Tensor mask;         // [F, U, V]
};

ClipInputs prepare_clip(const scene::SceneClip& clip, const Config& cfg);

/// Adds encoders, base, branch and SFA parameters.
void init_model(ParamStore& store, const Config& cfg, std::uint64_t seed);
/// Adds rank-r adapters (B = 0) to every attention block.
void init_adapters(ParamStore& store, const Config& cfg, std::uint64_t seed);
std::vector<std::string> attention_blocks();

bool stage1_trainable(const std::string& name);
bool stage2_trainable(const std::string& name);

/// Per-clip conditions, tokens [F, N, d].
encoders::ConditionBundle encode_clip(Binding& b, const scene::SceneClip& clip, const Config& cfg);
/// Learned null conditions for the unconditional pass.
encoders::ConditionBundle null_conditions(Binding& b, std::int64_t frames, const Config& cfg);

struct DenoiseOptions {
    bool branches = true;  // false: frozen base only
};

/// eps_hat for z_t [F, U, V, 3].
Var predict_noise(Binding& b, const Config& cfg, const NoiseSchedule& s, const Var& z_t, std::int64_t t,
                  const encoders::ConditionBundle& cond, const ClipInputs& in, DenoiseOptions opt = {});

/// Denoiser closure for sample(): conditional or null bundle per call.
Denoiser make_denoiser(Binding& b, const Config& cfg, const NoiseSchedule& s, const ClipInputs& in);

/// Guided sample for one clip with inference-only parameters.
Tensor generate(const ParamStore& params, const Config& cfg, const ClipInputs& in, std::uint64_t seed);

struct Stage1Result {
    std::vector<double> losses;
};

using StepCallback = std::function<void(std::int64_t step, double loss)>;

/// Stage-1 training in place on params. Throws ContractError on an empty dataset.
Stage1Result train_stage1(const std::vector<scene::SceneClip>& data, const Config& cfg, ParamStore& params,
                          const StepCallback& on_step = {});

/// Trailing-window mean of a curve.
double window_mean(const std::vector<double>& xs, std::size_t begin, std::size_t end);

}  // namespace ddfx::diffusion
