#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ddfx/scene.hpp"

namespace ddfx {

struct ModelConfig {
    std::int64_t d = 32;           // token width
    std::int64_t d_cat = 32;       // embedding-table width
    std::int64_t fourier_frequencies = 8;
    double fourier_base = 1.0;
    std::int64_t n_sample = 32;    // samples per ray
    double ray_step = 0.2;         // meters between samples
    double lambda_fg = 1.0;
    std::int64_t branch_width = 16;
    std::int64_t base_width = 8;
    std::int64_t token_pool = 4;   // ray features pooled to (U/k, V/k) tokens
    std::int64_t deform_points = 4;
    double sigma_data = 0.5;
    double cond_dropout = 0.1;
};

struct DiffusionConfig {
    std::int64_t steps = 100;  // T
    double beta_min = 1e-4;
    double beta_max = 0.02;
    std::int64_t sample_steps = 20;
    double cfg_scale = 2.0;
};

struct TrainConfig {
    std::int64_t steps = 2000;
    std::int64_t batch = 4;  // clips per step
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RewardConfig {
    std::int64_t updates = 300;
    std::int64_t sample_steps = 10;  // S_r
    double cfg_scale = 2.0;
    double lr = 1e-3;
    std::int64_t clips_per_update = 1;
    std::int64_t rank = 4;
    double scale = 1.0;
    std::int64_t eval_scenes = 8;
    std::int64_t eval_every = 50;
};

struct Config {
    std::uint64_t seed = 0;
    scene::SceneSpec scene;
    ModelConfig model;
    DiffusionConfig diffusion;
    TrainConfig train;
    RewardConfig reward;

    /// Throws ConfigError naming the first offending field.
    void validate() const;
};

std::string config_to_string(const Config& cfg);
/// Parses and validates. Missing fields keep their defaults; unknown fields
/// are an error.
Config config_from_string(const std::string& text);
Config load_config(const std::filesystem::path& path);
void save_config(const Config& cfg, const std::filesystem::path& path);

/// Applies DDFX_SEED from the environment, if set.
void apply_env_overrides(Config& cfg);

}  // namespace ddfx
