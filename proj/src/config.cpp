#include "ddfx/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ddfx/errors.hpp"

namespace ddfx {

namespace {

using json = nlohmann::ordered_json;

template <typename C, typename F>
void visit(C& c, F&& f) {
    f("seed", c.seed);
    f("scene.frames", c.scene.frames);
    f("scene.min_boxes", c.scene.min_boxes);
    f("scene.max_boxes", c.scene.max_boxes);
    f("scene.grid_dims", c.scene.grid_dims);
    f("scene.voxel_size", c.scene.voxel_size);
    f("scene.image_height", c.scene.image_height);
    f("scene.image_width", c.scene.image_width);
    f("scene.focal", c.scene.focal);
    f("scene.camera_height", c.scene.camera_height);
    f("scene.pitch_deg", c.scene.pitch_deg);
    f("scene.road_half_width_min", c.scene.road_half_width_min);
    f("scene.road_half_width_max", c.scene.road_half_width_max);
    f("scene.max_speed", c.scene.max_speed);
    f("model.d", c.model.d);
    f("model.d_cat", c.model.d_cat);
    f("model.fourier_frequencies", c.model.fourier_frequencies);
    f("model.fourier_base", c.model.fourier_base);
    f("model.n_sample", c.model.n_sample);
    f("model.ray_step", c.model.ray_step);
    f("model.lambda_fg", c.model.lambda_fg);
    f("model.branch_width", c.model.branch_width);
    f("model.base_width", c.model.base_width);
    f("model.token_pool", c.model.token_pool);
    f("model.deform_points", c.model.deform_points);
    f("model.sigma_data", c.model.sigma_data);
    f("model.cond_dropout", c.model.cond_dropout);
    f("diffusion.steps", c.diffusion.steps);
    f("diffusion.beta_min", c.diffusion.beta_min);
    f("diffusion.beta_max", c.diffusion.beta_max);
    f("diffusion.sample_steps", c.diffusion.sample_steps);
    f("diffusion.cfg_scale", c.diffusion.cfg_scale);
    f("train.steps", c.train.steps);
    f("train.batch", c.train.batch);
    f("train.lr", c.train.lr);
    f("train.beta1", c.train.beta1);
    f("train.beta2", c.train.beta2);
    f("train.eps", c.train.eps);
    f("reward.updates", c.reward.updates);
    f("reward.sample_steps", c.reward.sample_steps);
    f("reward.cfg_scale", c.reward.cfg_scale);
    f("reward.lr", c.reward.lr);
    f("reward.clips_per_update", c.reward.clips_per_update);
    f("reward.rank", c.reward.rank);
    f("reward.scale", c.reward.scale);
    f("reward.eval_scenes", c.reward.eval_scenes);
    f("reward.eval_every", c.reward.eval_every);
}

std::pair<std::string, std::string> split_key(const std::string& key) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) return {"", key};
    return {key.substr(0, dot), key.substr(dot + 1)};
}

[[noreturn]] void bad(const std::string& field, const std::string& why) {
    throw ConfigError("config field " + field + ": " + why);
}

void need(bool ok, const std::string& field, const std::string& why) {
    if (!ok) bad(field, why);
}

}  // namespace

void Config::validate() const {
    visit(*this, [](const std::string& name, const auto& v) {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>)
            need(std::isfinite(v), name, "must be finite");
    });
    const auto& s = scene;
    need(s.frames >= 1, "scene.frames", "must be >= 1");
    need(s.min_boxes >= 0, "scene.min_boxes", "must be >= 0");
    need(s.max_boxes >= s.min_boxes, "scene.max_boxes", "must be >= scene.min_boxes");
    for (auto g : s.grid_dims) need(g >= 1, "scene.grid_dims", "extents must be >= 1");
    need(s.voxel_size > 0, "scene.voxel_size", "must be > 0");
    need(s.image_height >= 1, "scene.image_height", "must be >= 1");
    need(s.image_width >= 1, "scene.image_width", "must be >= 1");
    need(s.focal > 0, "scene.focal", "must be > 0");
    need(s.road_half_width_min > 0 && s.road_half_width_min <= s.road_half_width_max, "scene.road_half_width_min",
         "must be in (0, road_half_width_max]");
    need(s.max_speed >= 0, "scene.max_speed", "must be >= 0");

    const auto& m = model;
    need(m.d >= 1, "model.d", "must be >= 1");
    need(m.d_cat >= 1, "model.d_cat", "must be >= 1");
    need(m.fourier_frequencies >= 1, "model.fourier_frequencies", "must be >= 1");
    need(m.fourier_base > 0, "model.fourier_base", "must be > 0");
    need(m.n_sample >= 1, "model.n_sample", "must be >= 1");
    need(m.ray_step > 0, "model.ray_step", "must be > 0");
    need(m.lambda_fg >= 0, "model.lambda_fg", "must be >= 0");
    need(m.branch_width >= 1, "model.branch_width", "must be >= 1");
    need(m.base_width >= 1, "model.base_width", "must be >= 1");
    need(m.token_pool >= 1, "model.token_pool", "must be >= 1");
    need(s.image_height % (2 * m.token_pool) == 0 && s.image_width % (2 * m.token_pool) == 0, "model.token_pool",
         "image size must be divisible by 2 * token_pool");
    need(m.token_pool % 2 == 0, "model.token_pool", "must be even");
    need(m.deform_points >= 1, "model.deform_points", "must be >= 1");
    need(m.sigma_data > 0, "model.sigma_data", "must be > 0");
    need(m.cond_dropout >= 0 && m.cond_dropout <= 1, "model.cond_dropout", "must be in [0, 1]");

    const auto& df = diffusion;
    need(df.steps >= 1, "diffusion.steps", "must be >= 1");
    need(df.beta_min > 0 && df.beta_min < 1, "diffusion.beta_min", "must be in (0, 1)");
    need(df.beta_max >= df.beta_min && df.beta_max < 1, "diffusion.beta_max", "must be in [beta_min, 1)");
    need(df.sample_steps >= 1 && df.sample_steps <= df.steps, "diffusion.sample_steps", "must be in [1, steps]");

    need(train.steps >= 0, "train.steps", "must be >= 0");
    need(train.batch >= 1, "train.batch", "must be >= 1");
    need(train.lr > 0, "train.lr", "must be > 0");
    need(train.beta1 >= 0 && train.beta1 < 1, "train.beta1", "must be in [0, 1)");
    need(train.beta2 >= 0 && train.beta2 < 1, "train.beta2", "must be in [0, 1)");
    need(train.eps > 0, "train.eps", "must be > 0");

    const auto& r = reward;
    need(r.updates >= 0, "reward.updates", "must be >= 0");
    need(r.sample_steps >= 1 && r.sample_steps <= df.steps, "reward.sample_steps", "must be in [1, diffusion.steps]");
    need(r.lr > 0, "reward.lr", "must be > 0");
    need(r.clips_per_update >= 1, "reward.clips_per_update", "must be >= 1");
    need(r.rank >= 1 && r.rank <= std::min(m.d, m.base_width * 2), "reward.rank",
         "must be in [1, min(model.d, attention width)]");
    need(r.eval_scenes >= 1, "reward.eval_scenes", "must be >= 1");
    need(r.eval_every >= 1, "reward.eval_every", "must be >= 1");
}

std::string config_to_string(const Config& cfg) {
    json j = json::object();
    visit(cfg, [&](const std::string& name, const auto& v) {
        auto [sec, key] = split_key(name);
        if (sec.empty())
            j[key] = v;
        else
            j[sec][key] = v;
    });
    return j.dump(2) + "\n";
}

Config config_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    Config cfg;
    std::set<std::string> known;
    visit(cfg, [&](const std::string& name, auto& v) {
        known.insert(name);
        auto [sec, key] = split_key(name);
        const json* node = &j;
        if (!sec.empty()) {
            if (!j.contains(sec)) return;
            node = &j[sec];
            if (!node->is_object()) bad(sec, "must be an object");
        }
        if (!node->contains(key)) return;
        try {
            using T = std::decay_t<decltype(v)>;
            const json& x = (*node)[key];
            if constexpr (std::is_same_v<T, double>) {
                if (!x.is_number()) bad(name, "expected a number");
            } else if constexpr (std::is_integral_v<T>) {
                if (!x.is_number_integer()) bad(name, "expected an integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (x.is_number_integer() && !x.is_number_unsigned()) bad(name, "must be non-negative");
            }
            v = x.get<T>();
        } catch (const json::exception& e) {
            bad(name, e.what());
        }
    });
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it->is_object()) {
            for (auto jt = it->begin(); jt != it->end(); ++jt)
                if (!known.count(it.key() + "." + jt.key())) bad(it.key() + "." + jt.key(), "unknown field");
        } else if (!known.count(it.key())) {
            bad(it.key(), "unknown field");
        }
    }
    cfg.validate();
    return cfg;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_string(ss.str());
}

void save_config(const Config& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("config: cannot write " + path.string());
    out << config_to_string(cfg);
}

void apply_env_overrides(Config& cfg) {
    const char* s = std::getenv("DDFX_SEED");
    if (!s) return;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*s == '\0' || *end != '\0' || errno != 0 || *s == '-')
        throw ConfigError(std::string("DDFX_SEED: not a non-negative integer: '") + s + "'");
    cfg.seed = v;
}

}  // namespace ddfx
