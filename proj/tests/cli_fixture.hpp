#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "ddfx/config.hpp"

namespace testutil {

namespace fs = std::filesystem;

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Every regular file under root keyed by relative path.
inline std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

/// Runs every subcommand into root with a small config.
inline std::vector<int> run_pipeline(const fs::path& root, const ddfx::Config& cfg) {
    fs::remove_all(root);
    fs::create_directories(root);
    const auto r = [&](const char* p) { return (root / p).string(); };
    ddfx::save_config(cfg, root / "config.json");
    using ddfx::cli::run;
    return {
        run({"gen-scenes", "--count", "3", "--seed", "11", "--config", r("config.json"), "--out", r("scenes")}),
        run({"train", "--scenes", r("scenes"), "--out", r("stage1.ckpt"), "--config", r("config.json"), "--seed", "4",
             "--loss-csv", r("loss.csv")}),
        run({"finetune-reward", "--checkpoint", r("stage1.ckpt"), "--scenes", r("scenes"), "--out", r("stage2.ckpt"),
             "--seed", "5", "--reward-csv", r("reward.csv"), "--eval-csv", r("eval.csv")}),
        run({"sample", "--checkpoint", r("stage2.ckpt"), "--scenes", r("scenes"), "--out", r("frames"), "--seed", "6"}),
        run({"eval", "--checkpoint", r("stage2.ckpt"), "--scenes", r("scenes"), "--out", r("report.json"), "--seed", "7"}),
    };
}

}  // namespace testutil
