#include <cstdlib>
#include <filesystem>

#include "doctest.h"
#include "ddfx/config.hpp"
#include "ddfx/errors.hpp"

using namespace ddfx;

namespace {

void check_rejects(const std::string& text, const std::string& field) {
    INFO(text);
    try {
        config_from_string(text);
        FAIL("accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
}

}  // namespace

TEST_CASE("defaults validate and round-trip") {
    const Config d;
    d.validate();
    CHECK(d.model.d == 32);
    CHECK(d.diffusion.steps == 100);
    CHECK(d.diffusion.sample_steps == 20);
    CHECK(d.diffusion.cfg_scale == 2.0);
    CHECK(d.reward.sample_steps == 10);
    const auto text = config_to_string(d);
    CHECK(config_to_string(config_from_string(text)) == text);
    CHECK(config_to_string(config_from_string("{}")) == text);
}

TEST_CASE("partial configs keep defaults; doubles round-trip exactly") {
    Config c;
    c.seed = 18446744073709551615ULL;
    c.model.lambda_fg = 0.1 + 0.2;
    c.train.lr = 3e-4;
    const auto back = config_from_string(config_to_string(c));
    CHECK(back.seed == c.seed);
    CHECK(back.model.lambda_fg == c.model.lambda_fg);
    CHECK(back.train.lr == 3e-4);
    const auto p = config_from_string(R"({"train": {"steps": 7}, "seed": 3})");
    CHECK(p.train.steps == 7);
    CHECK(p.seed == 3);
    CHECK(p.train.batch == Config{}.train.batch);
}

TEST_CASE("invalid configs name the offending field") {
    check_rejects(R"({"model": {"d": 0}})", "model.d");
    check_rejects(R"({"model": {"token_pool": 3}})", "model.token_pool");
    check_rejects(R"({"diffusion": {"sample_steps": 101}})", "diffusion.sample_steps");
    check_rejects(R"({"diffusion": {"beta_max": 1e-5}})", "diffusion.beta_max");
    check_rejects(R"({"reward": {"rank": 100}})", "reward.rank");
    check_rejects(R"({"model": {"cond_dropout": 1.5}})", "model.cond_dropout");
    check_rejects(R"({"scene": {"focal": -1}})", "scene.focal");
    check_rejects(R"({"model": {"bogus": 1}})", "model.bogus");
    check_rejects(R"({"bogus": 1})", "bogus");
    check_rejects(R"({"train": {"steps": 1.5}})", "train.steps");
    check_rejects(R"({"seed": -4})", "seed");
    check_rejects(R"({"model": {"d": "32"}})", "model.d");
    check_rejects(R"({"model": 3})", "model");
    check_rejects("{not json", "malformed");
    check_rejects("[1, 2]", "top level");
}

TEST_CASE("file round-trip and missing file") {
    const auto path = std::filesystem::temp_directory_path() / "ddfx_test_config.json";
    Config c;
    c.seed = 42;
    save_config(c, path);
    CHECK(load_config(path).seed == 42);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_config(path), ConfigError);
}

TEST_CASE("seed environment override") {
    Config c;
    ::setenv("DDFX_SEED", "123", 1);
    apply_env_overrides(c);
    CHECK(c.seed == 123);
    for (const char* bad : {"", "-1", "12x", "99999999999999999999999"}) {
        ::setenv("DDFX_SEED", bad, 1);
        CHECK_THROWS_AS(apply_env_overrides(c), ConfigError);
    }
    ::unsetenv("DDFX_SEED");
    c.seed = 5;
    apply_env_overrides(c);
    CHECK(c.seed == 5);
}
