#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "ddfx/checkpoint.hpp"
#include "ddfx/config.hpp"
#include "ddfx/diffusion.hpp"
#include "ddfx/errors.hpp"
#include "ddfx/metrics.hpp"
#include "ddfx/reward.hpp"
#include "ddfx/rng.hpp"
#include "ddfx/scene.hpp"

namespace ddfx::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
    using Error::Error;
};

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("failed writing " + path.string());
}

std::vector<fs::path> scene_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("scene directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("no scene files (*.json) in " + dir.string());
    return files;
}

std::vector<scene::SceneClip> load_scenes(const fs::path& dir) {
    std::vector<scene::SceneClip> out;
    for (const auto& f : scene_files(dir)) out.push_back(scene::load_scene(f));
    return out;
}

std::vector<diffusion::ClipInputs> prepare_all(const std::vector<scene::SceneClip>& clips, const Config& cfg) {
    std::vector<diffusion::ClipInputs> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(diffusion::prepare_clip(c, cfg));
    return out;
}

// Config from file (or defaults), then DDFX_SEED, then an explicit --seed.
Config base_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    Config cfg = path.empty() ? Config{} : load_config(path);
    apply_env_overrides(cfg);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

Checkpoint open_checkpoint(const std::string& path, const std::optional<std::uint64_t>& seed) {
    if (!fs::exists(path)) throw Error("checkpoint not found: " + path);
    Checkpoint ck = load_checkpoint(path);
    apply_env_overrides(ck.config);
    if (seed) ck.config.seed = *seed;
    ck.config.validate();
    return ck;
}

void write_ppm(const fs::path& path, const Tensor& clip, std::int64_t frame) {
    const std::int64_t U = clip.dim(1), V = clip.dim(2);
    std::string out = "P6\n" + std::to_string(V) + " " + std::to_string(U) + "\n255\n";
    const double* p = clip.vec().data() + frame * U * V * 3;
    for (std::int64_t i = 0; i < U * V * 3; ++i)
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(p[i], 0.0, 1.0) * 255.0))));
    write_text(path, out);
}

Tensor frame_of(const Tensor& clip, std::int64_t f) {
    const std::int64_t n = clip.dim(1) * clip.dim(2) * (clip.rank() == 4 ? clip.dim(3) : 1);
    Shape s(clip.shape().begin() + 1, clip.shape().end());
    return Tensor(s, std::vector<double>(clip.vec().begin() + f * n, clip.vec().begin() + (f + 1) * n));
}

Tensor stack_frames(const std::vector<Tensor>& clips) {
    std::vector<double> d;
    std::int64_t n = 0;
    for (const auto& c : clips) {
        d.insert(d.end(), c.vec().begin(), c.vec().end());
        n += c.dim(0);
    }
    Shape s = clips.at(0).shape();
    s[0] = n;
    return Tensor(s, std::move(d));
}

// ---------------------------------------------------------------------------

int gen_scenes(const std::string& config, std::optional<std::uint64_t> seed, std::int64_t count,
               const std::string& out) {
    if (count < 1) throw UsageError("--count must be >= 1");
    const Config cfg = base_config(config, seed);
    fs::create_directories(out);
    for (std::int64_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04lld.json", static_cast<long long>(i));
        scene::save_scene(scene::generate_synthetic_scene(cfg.seed + static_cast<std::uint64_t>(i), cfg.scene),
                          fs::path(out) / name);
    }
    std::cerr << "wrote " << count << " scenes to " << out << "\n";
    return 0;
}

int train(const std::string& config, std::optional<std::uint64_t> seed, std::optional<std::int64_t> steps,
          const std::string& scenes, const std::string& out, const std::string& loss_csv) {
    Config cfg = base_config(config, seed);
    if (steps) cfg.train.steps = *steps;
    cfg.validate();
    const auto data = load_scenes(scenes);
    Checkpoint ck{cfg, {}};
    diffusion::init_model(ck.params, cfg, cfg.seed);
    const auto res = diffusion::train_stage1(data, cfg, ck.params, [&](std::int64_t step, double loss) {
        if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << " loss " << loss << "\n";
    });
    save_checkpoint(ck, out);
    if (!loss_csv.empty()) {
        std::string csv = "step,loss\n";
        for (std::size_t i = 0; i < res.losses.size(); ++i) csv += std::to_string(i) + "," + fmt(res.losses[i]) + "\n";
        write_text(loss_csv, csv);
    }
    return 0;
}

int finetune(const std::string& checkpoint, std::optional<std::uint64_t> seed, std::optional<std::int64_t> updates,
             const std::string& scenes, const std::string& eval_scenes, const std::string& out,
             const std::string& reward_csv, const std::string& eval_csv) {
    Checkpoint ck = open_checkpoint(checkpoint, seed);
    if (updates) ck.config.reward.updates = *updates;
    ck.config.validate();
    const auto data = load_scenes(scenes);
    std::vector<scene::SceneClip> eval_set;
    if (!eval_scenes.empty()) {
        eval_set = load_scenes(eval_scenes);
    } else {
        const auto n = std::min<std::size_t>(data.size(), static_cast<std::size_t>(ck.config.reward.eval_scenes));
        eval_set.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n));
    }
    const auto res = reward::train_stage2(data, eval_set, ck.config, ck.params, [&](std::int64_t u, double r) {
        if ((u + 1) % 10 == 0) std::cerr << "update " << u + 1 << " reward " << r << "\n";
    });
    save_checkpoint(ck, out);
    if (!reward_csv.empty()) {
        std::string csv = "update,reward\n";
        for (std::size_t i = 0; i < res.rewards.size(); ++i) csv += std::to_string(i) + "," + fmt(res.rewards[i]) + "\n";
        write_text(reward_csv, csv);
    }
    if (!eval_csv.empty()) {
        std::string csv = "update,mean_reward\n";
        for (const auto& [u, r] : res.eval_curve) csv += std::to_string(u) + "," + fmt(r) + "\n";
        write_text(eval_csv, csv);
    }
    return 0;
}

int sample(const std::string& checkpoint, std::optional<std::uint64_t> seed, const std::string& scenes,
           const std::string& out) {
    const Checkpoint ck = open_checkpoint(checkpoint, seed);
    const auto files = scene_files(scenes);
    fs::create_directories(out);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto clip = scene::load_scene(files[i]);
        const auto in = diffusion::prepare_clip(clip, ck.config);
        const Tensor x = diffusion::generate(ck.params, ck.config, in, ck.config.seed + i);
        for (std::int64_t f = 0; f < x.dim(0); ++f)
            write_ppm(fs::path(out) / (files[i].stem().string() + "_f" + std::to_string(f) + ".ppm"), x, f);
    }
    std::cerr << "sampled " << files.size() << " scenes to " << out << "\n";
    return 0;
}

int eval(const std::string& checkpoint, std::optional<std::uint64_t> seed, const std::string& scenes,
         const std::string& out, double threshold) {
    const Checkpoint ck = open_checkpoint(checkpoint, seed);
    const Config& cfg = ck.config;
    const auto clips = load_scenes(scenes);
    if (clips.size() < 2) throw UsageError("eval needs at least 2 scenes");
    const auto inputs = prepare_all(clips, cfg);

    std::vector<Tensor> gen, ref;
    double iou = 0.0, rew = 0.0;
    std::int64_t frames = 0;
    const metrics::FrameFeatureExtractor ffx(cfg.scene.image_height, cfg.scene.image_width);
    const reward::FeatureExtractor tfx(cfg.scene.image_height, cfg.scene.image_width);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        gen.push_back(diffusion::generate(ck.params, cfg, inputs[i], cfg.seed + i));
        ref.push_back(inputs[i].x0);
        rew += reward::reward_i3d(constant(gen.back()), constant(ref.back()), tfx).value().item();
        for (std::int64_t f = 0; f < gen.back().dim(0); ++f, ++frames)
            iou += metrics::controllability_iou(frame_of(gen.back(), f), frame_of(inputs[i].mask, f), threshold);
    }
    iou /= static_cast<double>(frames);
    rew /= static_cast<double>(inputs.size());
    const double fid = metrics::fid_analog(stack_frames(gen), stack_frames(ref), ffx);
    const double fvd = reward::fvd_analog(gen, ref, tfx);
    const double score = metrics::composite_score(fvd, 100.0 * iou, 100.0 * iou);

    nlohmann::ordered_json j;
    j["scenes"] = clips.size();
    j["seed"] = cfg.seed;
    j["has_adapters"] = ck.params.has_group("adapters");
    j["fid_analog"] = fid;
    j["fvd_analog"] = fvd;
    j["controllability_iou"] = iou;
    j["iou_threshold"] = threshold;
    j["mean_reward"] = rew;
    j["composite_score"] = score;
    const std::string text = j.dump(2) + "\n";
    if (out.empty())
        std::cout << text;
    else
        write_text(out, text);
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"ddfx: dual-branch conditional video diffusion on toy driving scenes"};
    app.name("ddfx");
    app.require_subcommand(1);

    std::string config, scenes, eval_scenes, out, checkpoint, loss_csv, reward_csv, eval_csv;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps, updates;
    std::int64_t count = 8;
    double threshold = metrics::kIouThreshold;

    auto* gen = app.add_subcommand("gen-scenes", "Generate synthetic scene files");
    gen->add_option("--count", count, "Number of scenes")->capture_default_str();
    gen->add_option("--seed", seed, "Base seed; scene i uses seed + i");
    gen->add_option("--config", config, "Config JSON")->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Stage-1 training of branches, SFA and encoders");
    tr->add_option("--scenes", scenes, "Scene directory")->required();
    tr->add_option("--out", out, "Checkpoint to write")->required();
    tr->add_option("--config", config, "Config JSON")->check(CLI::ExistingFile);
    tr->add_option("--seed", seed, "Seed (overrides config and DDFX_SEED)");
    tr->add_option("--steps", steps, "Optimizer steps");
    tr->add_option("--loss-csv", loss_csv, "Write step,loss curve");

    auto* ft = app.add_subcommand("finetune-reward", "Stage-2 reward fine-tuning of attention adapters");
    ft->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();
    ft->add_option("--scenes", scenes, "Training scene directory")->required();
    ft->add_option("--eval-scenes", eval_scenes, "Fixed eval scene directory (default: first training scenes)");
    ft->add_option("--out", out, "Checkpoint to write")->required();
    ft->add_option("--seed", seed, "Seed");
    ft->add_option("--updates", updates, "Number of updates");
    ft->add_option("--reward-csv", reward_csv, "Write update,reward curve");
    ft->add_option("--eval-csv", eval_csv, "Write update,mean_reward eval curve");

    auto* sa = app.add_subcommand("sample", "Generate clips for scenes as PPM frames");
    sa->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
    sa->add_option("--scenes", scenes, "Scene directory")->required();
    sa->add_option("--out", out, "Output directory")->required();
    sa->add_option("--seed", seed, "Base seed; scene i uses seed + i");

    auto* ev = app.add_subcommand("eval", "Metrics report as JSON");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
    ev->add_option("--scenes", scenes, "Scene directory (at least 2)")->required();
    ev->add_option("--out", out, "Report path (default: stdout)");
    ev->add_option("--seed", seed, "Base seed; scene i uses seed + i");
    ev->add_option("--iou-threshold", threshold, "Foreground binarization threshold")->capture_default_str();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (gen->parsed()) return gen_scenes(config, seed, count, out);
        if (tr->parsed()) return train(config, seed, steps, scenes, out, loss_csv);
        if (ft->parsed())
            return finetune(checkpoint, seed, updates, scenes, eval_scenes, out, reward_csv, eval_csv);
        if (sa->parsed()) return sample(checkpoint, seed, scenes, out);
        return eval(checkpoint, seed, scenes, out, threshold);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ddfx::cli
