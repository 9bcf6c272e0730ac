#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "ddfx/checkpoint.hpp"
#include "ddfx/diffusion.hpp"
#include "ddfx/errors.hpp"
#include "helpers.hpp"

using namespace ddfx;

namespace {

Checkpoint sample_checkpoint(bool adapters) {
    Checkpoint ck{testutil::tiny_config(), {}};
    ck.config.seed = 77;
    diffusion::init_model(ck.params, ck.config, 5);
    if (adapters) diffusion::init_adapters(ck.params, ck.config, 6);
    return ck;
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
    for (bool adapters : {false, true}) {
        const auto ck = sample_checkpoint(adapters);
        const auto bytes = checkpoint_to_bytes(ck);
        const auto back = checkpoint_from_bytes(bytes);
        CHECK(back.params == ck.params);
        CHECK(config_to_string(back.config) == config_to_string(ck.config));
        CHECK(checkpoint_to_bytes(back) == bytes);
        CHECK(back.params.has_group("adapters") == adapters);
    }
}

TEST_CASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "ddfx_test.ckpt";
    const auto ck = sample_checkpoint(true);
    save_checkpoint(ck, path);
    CHECK(load_checkpoint(path).params == ck.params);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), Error);
}

TEST_CASE("header layout is little-endian") {
    const auto bytes = checkpoint_to_bytes(sample_checkpoint(false));
    CHECK(bytes.substr(0, 4) == "DDFX");
    CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 0);
    CHECK(bytes[7] == 0);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const auto bytes = checkpoint_to_bytes(sample_checkpoint(false));
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(checkpoint_from_bytes(bad), ParseError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(checkpoint_from_bytes(bad), ParseError);
    // Config length claims more than the file holds.
    bad = bytes;
    bad[15] = 0x7f;
    CHECK_THROWS_AS(checkpoint_from_bytes(bad), ParseError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
        CHECK_THROWS_AS(checkpoint_from_bytes(bytes.substr(0, cut)), ParseError);
    CHECK_THROWS_AS(checkpoint_from_bytes(bytes + "x"), ParseError);
    CHECK_THROWS_AS(checkpoint_from_bytes(""), ParseError);
}

TEST_CASE("tables that differ from this build are rejected") {
    const auto bytes = checkpoint_to_bytes(sample_checkpoint(false));
    const auto tables = checkpoint_tables_json();
    const auto at = bytes.find(tables);
    REQUIRE(at != std::string::npos);
    auto bad = bytes;
    const auto word = bad.find("pedestrian", at);
    REQUIRE(word != std::string::npos);
    bad[word] = 'P';
    CHECK_THROWS_AS(checkpoint_from_bytes(bad), ValidationError);
}
