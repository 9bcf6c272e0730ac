#pragma once

#include <cmath>
#include <functional>

#include "ddfx/autodiff.hpp"
#include "ddfx/config.hpp"
#include "ddfx/nn.hpp"
#include "ddfx/ors.hpp"
#include "ddfx/rng.hpp"
#include "ddfx/scene.hpp"

namespace testutil {

using namespace ddfx;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
    Rng rng(seed);
    Tensor t(shape);
    for (auto& x : t.data()) x = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_normal(const Shape& shape, std::uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    Tensor t(shape);
    for (auto& x : t.data()) x = stddev * rng.normal();
    return t;
}

/// Forward-looking pinhole camera (camera x right, y down, z forward;
/// world y forward, z up) at `center` with focal f, principal point at the
/// image center.
inline scene::CameraModel forward_camera(scene::Vec3 center, double f, std::int64_t h, std::int64_t w) {
    scene::CameraModel cam;
    cam.K = {{{f, 0, w / 2.0}, {0, f, h / 2.0}, {0, 0, 1}}};
    cam.R = {{{1, 0, 0}, {0, 0, 1}, {0, -1, 0}}};
    cam.T = {0, 0, 0};
    cam.p_ego = center;
    cam.height = h;
    cam.width = w;
    return cam;
}

/// Random grid with codes drawn from {0 (weight 3), 1, 2, 8, 9}.
inline scene::OccupancyGrid random_grid(std::array<std::int64_t, 3> dims, scene::Vec3 origin, double voxel,
                                        std::uint64_t seed, double fill = 0.3) {
    auto g = scene::OccupancyGrid::empty(dims, origin, voxel);
    Rng rng(seed);
    const int codes[4] = {scene::kVehicle, scene::kPedestrian, scene::kRoad, scene::kLaneMarking};
    for (auto& c : g.cells) c = rng.uniform() < fill ? static_cast<std::uint8_t>(codes[rng.uniform_int(0, 3)]) : 0;
    return g;
}

/// Small model and scene sizes for fast unit tests.
inline Config tiny_config() {
    Config c;
    c.scene.frames = 2;
    c.scene.image_height = 8;
    c.scene.image_width = 8;
    c.scene.focal = 4.0;
    c.scene.max_boxes = 2;
    c.model.d = 8;
    c.model.d_cat = 8;
    c.model.fourier_frequencies = 2;
    c.model.n_sample = 6;
    c.model.ray_step = 0.8;
    c.model.branch_width = 4;
    c.model.base_width = 4;
    c.model.token_pool = 2;
    c.model.deform_points = 2;
    c.diffusion.steps = 20;
    c.diffusion.sample_steps = 4;
    c.train.steps = 3;
    c.train.batch = 2;
    c.reward.updates = 2;
    c.reward.sample_steps = 2;
    c.reward.rank = 2;
    c.reward.eval_scenes = 2;
    c.reward.eval_every = 1;
    c.validate();
    return c;
}

/// Directional derivative check over every parameter of a group: the scalar
/// alpha moves all selected parameters along a fixed random direction u.
/// Returns the relative error of the analytic against the central difference.
inline double directional_grad_check(const ParamStore& store, const std::function<bool(const std::string&)>& select,
                                     const std::function<Var(Binding&)>& loss, std::uint64_t seed, double h = 1e-5) {
    std::map<std::string, Tensor> dirs;
    std::uint64_t k = 0;
    for (const auto& [name, t] : store.all())
        if (select(name)) dirs.emplace(name, random_normal(t.shape(), seed + 7919 * ++k));
    auto f = [&](const Var& alpha) {
        Binding b(store);
        for (const auto& [name, u] : dirs) {
            const Var p = ad::add(constant(store.get(name)),
                                  ad::mul(ad::broadcast_to(ad::reshape(alpha, {1}), u.shape()), constant(u)));
            b.override(name, p);
        }
        return loss(b);
    };
    return grad_check(f, Tensor({1}, {0.0}), h);
}

inline scene::CameraModel identity_camera(std::int64_t h, std::int64_t w) {
    scene::CameraModel cam;
    cam.K = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    cam.R = cam.K;
    cam.height = h;
    cam.width = w;
    return cam;
}

// Camera at the origin looking along +z, principal point at the image center.
inline scene::CameraModel axis_camera(double f, std::int64_t h, std::int64_t w) {
    scene::CameraModel cam = identity_camera(h, w);
    cam.K = {{{f, 0, w / 2.0}, {0, f, h / 2.0}, {0, 0, 1}}};
    return cam;
}

/// Brute-force ORS: every sample point tested against every voxel.
inline Tensor oracle_ors(const scene::OccupancyGrid& g, const ors::RayBundle& rays) {
    Tensor out({rays.height, rays.width, rays.n_sample});
    for (std::int64_t r = 0; r < rays.height; ++r)
        for (std::int64_t c = 0; c < rays.width; ++c)
            for (std::int64_t i = 0; i < rays.n_sample; ++i) {
                const auto& d = rays.direction(r, c);
                const double t = rays.step * static_cast<double>(i);
                const scene::Vec3 p{rays.origin[0] + d[0] * t, rays.origin[1] + d[1] * t, rays.origin[2] + d[2] * t};
                int code = 0;
                for (std::int64_t a = 0; a < g.dims[0]; ++a)
                    for (std::int64_t b = 0; b < g.dims[1]; ++b)
                        for (std::int64_t k = 0; k < g.dims[2]; ++k) {
                            const scene::Vec3 lo{g.origin[0] + a * g.voxel_size, g.origin[1] + b * g.voxel_size,
                                          g.origin[2] + k * g.voxel_size};
                            bool in = true;
                            for (int x = 0; x < 3; ++x) in = in && p[x] >= lo[x] && p[x] < lo[x] + g.voxel_size;
                            if (in) code = g.at(a, b, k);
                        }
                out[static_cast<std::size_t>((r * rays.width + c) * rays.n_sample + i)] = code / static_cast<double>(scene::kMaxCode);
            }
    return out;
}


}  // namespace testutil
