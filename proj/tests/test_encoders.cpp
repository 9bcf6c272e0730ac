#include <cmath>
#include <numbers>

#include "doctest.h"
#include "ddfx/encoders.hpp"
#include "ddfx/errors.hpp"
#include "helpers.hpp"

using namespace ddfx;
using namespace ddfx::encoders;

namespace {

struct Fixture {
    EncoderDims dims{8, 6, {3, 1.0}};
    ParamStore store;
    EmbeddingTable table;
    Fixture() { init_encoders(store, dims, 5); }
};

scene::Box box(int cat, double x) { return {cat, scene::box_corners({x, 1, 0}, {x + 0.5, 2, 0.7})}; }

scene::MapElement road(double x) {
    scene::MapElement m{scene::kRoad, {}};
    for (int i = 0; i < 8; ++i) m.points[static_cast<std::size_t>(i)] = {x, 0.5 * i, 0};
    return m;
}

Tensor row(const Tensor& t, std::int64_t i) {
    const auto d = t.dim(1);
    return Tensor({d}, std::vector<double>(t.vec().begin() + i * d, t.vec().begin() + (i + 1) * d));
}

}  // namespace

TEST_CASE("fourier embedding fixtures") {
    const FourierSpec spec{4, 1.0};
    const std::vector<double> zero{0.0};
    const auto z = fourier_embed(zero, spec);
    for (std::size_t i = 0; i < z.size(); i += 2) {
        CHECK(z[i] == 0.0);
        CHECK(z[i + 1] == 1.0);
    }
    const std::vector<double> three{0.1, 0.2, 0.3};
    CHECK(fourier_embed(three, spec).size() == 24);

    const FourierSpec spec2{3, 0.7};
    const std::vector<double> x{std::numbers::pi / (2 * 0.7)};
    const auto e = fourier_embed(x, spec2);
    CHECK(std::abs(e[0] - 1.0) < 1e-12);
    CHECK(std::abs(e[1]) < 1e-12);

    const auto r = testutil::random_tensor({7}, 1, -5, 5);
    const auto f = fourier_embed(r.vec(), FourierSpec{6, 0.3});
    for (std::size_t i = 0; i < f.size(); i += 2) CHECK(std::abs(f[i] * f[i] + f[i + 1] * f[i + 1] - 1.0) < 1e-12);

    CHECK_THROWS_AS(FourierSpec({0, 1.0}).validate(), ConfigError);
    CHECK_THROWS_AS(FourierSpec({2, 0.0}).validate(), ConfigError);
}

TEST_CASE("embedding table has one distinct row per category and word") {
    Fixture fx;
    CHECK(fx.table.rows() == 4 + static_cast<std::int64_t>(scene::caption_vocabulary().size()));
    CHECK_THROWS_AS(fx.table.box_row(8), ValidationError);
    CHECK_THROWS_AS(fx.table.map_row(1), ValidationError);
    CHECK_THROWS_AS(fx.table.word_row("sunny"), ValidationError);
    const auto& embed = fx.store.get("encoders/embed");
    for (std::int64_t i = 0; i < fx.table.rows(); ++i)
        for (std::int64_t j = i + 1; j < fx.table.rows(); ++j) CHECK_FALSE(row(embed, i) == row(embed, j));
    CHECK_FALSE(encoder_trainable("encoders/text_proj"));
    CHECK(encoder_trainable("encoders/box/l1/w"));
}

TEST_CASE("box tokens: empty, one per box, permutation equivariant, deterministic") {
    Fixture fx;
    Binding b(fx.store);
    CHECK(encode_boxes(b, {}, fx.table, fx.dims).shape() == Shape{0, 8});
    const scene::BoxSet boxes{box(1, 0), box(2, 1), box(1, 2)};
    const auto t = encode_boxes(b, boxes, fx.table, fx.dims).value();
    CHECK(t.shape() == Shape{3, 8});
    const auto p = encode_boxes(b, {boxes[2], boxes[0], boxes[1]}, fx.table, fx.dims).value();
    CHECK(row(p, 0) == row(t, 2));
    CHECK(row(p, 1) == row(t, 0));
    CHECK(row(p, 2) == row(t, 1));
    const auto twice = encode_boxes(b, {boxes[1], boxes[1]}, fx.table, fx.dims).value();
    CHECK(row(twice, 0) == row(twice, 1));
    CHECK(encode_boxes(b, boxes, fx.table, fx.dims).value() == t);
    CHECK_THROWS_AS(encode_boxes(b, {box(9, 0)}, fx.table, fx.dims), ValidationError);
}

TEST_CASE("map tokens: empty, permutation equivariant, deterministic") {
    Fixture fx;
    Binding b(fx.store);
    CHECK(encode_map(b, {}, fx.table, fx.dims).shape() == Shape{0, 8});
    auto lane = road(1.0);
    lane.category = scene::kLaneMarking;
    const auto t = encode_map(b, {road(0.0), lane}, fx.table, fx.dims).value();
    const auto p = encode_map(b, {lane, road(0.0)}, fx.table, fx.dims).value();
    CHECK(row(p, 0) == row(t, 1));
    CHECK(row(p, 1) == row(t, 0));
    CHECK(encode_map(b, {road(0.0), lane}, fx.table, fx.dims).value() == t);
    auto bad = road(0.0);
    bad.category = scene::kVehicle;
    CHECK_THROWS_AS(encode_map(b, {bad}, fx.table, fx.dims), ValidationError);
}

TEST_CASE("text tokens") {
    Fixture fx;
    Binding b(fx.store);
    CHECK(encode_text(b, {}, fx.table, fx.dims).shape() == Shape{0, 8});
    const auto night = encode_text(b, {"night"}, fx.table, fx.dims).value();
    const auto day = encode_text(b, {"day"}, fx.table, fx.dims).value();
    CHECK_FALSE(night == day);
    const auto seq = encode_text(b, {"day", "rain"}, fx.table, fx.dims).value();
    CHECK(row(seq, 0) == row(day, 0));
    CHECK(encode_text(b, {"day", "rain"}, fx.table, fx.dims).value() == seq);
    CHECK_THROWS_AS(encode_text(b, {"snow"}, fx.table, fx.dims), ValidationError);
}

TEST_CASE("camera token") {
    Fixture fx;
    Binding b(fx.store);
    const auto cam = testutil::forward_camera({0, -1, 0.5}, 8, 8, 8);
    const auto t = encode_camera(b, cam, fx.dims).value();
    CHECK(t.shape() == Shape{1, 8});
    CHECK(encode_camera(b, cam, fx.dims).value() == t);
    auto moved = cam;
    moved.T = {0.05, 0.0, 0.02};
    CHECK(max_abs_diff(encode_camera(b, moved, fx.dims).value(), t) > 1e-6);
}

TEST_CASE("condition bundles") {
    Fixture fx;
    Binding b(fx.store);
    const auto cam = encode_camera(b, testutil::forward_camera({0, -1, 0.5}, 8, 8, 8), fx.dims);
    const auto text = encode_text(b, {"day", "rain", "fog"}, fx.table, fx.dims);
    const auto boxes = encode_boxes(b, {box(1, 0), box(2, 1)}, fx.table, fx.dims);
    const auto map = encode_map(b, {road(0), road(1), road(2), road(3)}, fx.table, fx.dims);
    const auto c = assemble_conditions(cam, text, boxes, map);
    CHECK(c.tokens(c.c_fg) == 6);
    CHECK(c.tokens(c.c_bg) == 8);
    CHECK(c.width() == 8);
    const auto fg = c.c_fg.value(), bg = c.c_bg.value();
    for (std::int64_t i = 0; i < 4; ++i) CHECK(row(fg, i) == row(bg, i));

    const auto e = assemble_conditions(cam, text, empty_tokens({}, 8), map);
    CHECK(e.tokens(e.c_fg) == 4);
    CHECK(e.c_fg.value() == concat_tokens({cam, text}).value());

    CHECK_THROWS_AS(assemble_conditions(cam, text, constant(Tensor({2, 5})), map), ContractError);
}
