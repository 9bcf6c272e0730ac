#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ddfx/diffusion.hpp"

// Reward-guided fine-tuning: full sampler chain on one tape, a temporal
// feature reward, and updates restricted to low-rank adapters.

namespace ddfx::reward {

/// Frozen random temporal feature stack: a 3x3x3 conv (3 -> 8 channels,
/// zero padding in time), silu, spatial avgpool 4, mean over time, linear
/// to 64.
class FeatureExtractor {
public:
    FeatureExtractor(std::int64_t height, std::int64_t width, std::uint64_t seed = 0x49334421ULL);
    std::int64_t width() const { return 64; }
    std::int64_t image_height() const { return height_; }
    std::int64_t image_width() const { return width_; }

private:
    friend Var extract_temporal_features(const Var& clip, const FeatureExtractor& fx);
    std::int64_t height_, width_;
    Tensor conv_w_, conv_b_, lin_w_, lin_b_;
};

/// clip [F, U, V, 3] -> [64].
Var extract_temporal_features(const Var& clip, const FeatureExtractor& fx);

/// -|phi(x0) - phi(v)|_2. The gradient at coinciding features is taken as 0.
Var reward_i3d(const Var& x0, const Var& v, const FeatureExtractor& fx);

/// Fréchet distance between per-clip temporal features; at least 2 clips per side.
double fvd_analog(const std::vector<Tensor>& generated, const std::vector<Tensor>& reference,
                  const FeatureExtractor& fx);

/// Guided sampling with every step recorded on the binding's tape.
Var denoise_with_grad(Binding& b, const Config& cfg, const diffusion::NoiseSchedule& s,
                      const diffusion::ClipInputs& in, std::int64_t steps, std::uint64_t seed);

/// Mean reward over clips, one fixed seed per clip (seed_base + index).
double mean_reward(const ParamStore& params, const Config& cfg, const std::vector<diffusion::ClipInputs>& clips,
                   const FeatureExtractor& fx, std::uint64_t seed_base);

struct Stage2Result {
    std::vector<double> rewards;                             // per update, training clip
    std::vector<std::pair<std::int64_t, double>> eval_curve;  // (update, mean eval reward)
};

using UpdateCallback = std::function<void(std::int64_t update, double reward)>;

/// Fine-tunes adapters in place (adding them if absent). Every other
/// parameter group is checked bit-unchanged at exit. Throws ContractError
/// if params lacks a stage-1 model or the dataset is empty.
Stage2Result train_stage2(const std::vector<scene::SceneClip>& data, const std::vector<scene::SceneClip>& eval_set,
                          const Config& cfg, ParamStore& params, const UpdateCallback& on_update = {});

}  // namespace ddfx::reward
