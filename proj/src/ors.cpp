#include "ddfx/ors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddfx/errors.hpp"

namespace ddfx::ors {

Vec3 RayBundle::sample_point(std::int64_t r, std::int64_t c, std::int64_t i) const {
    const Vec3& d = direction(r, c);
    const double t = step * static_cast<double>(i);
    return {origin[0] + d[0] * t, origin[1] + d[1] * t, origin[2] + d[2] * t};
}

RayBundle cast_rays(const CameraModel& cam, double step, std::int64_t n_sample) {
    if (!(step > 0.0)) throw ContractError("cast_rays: step must be > 0");
    if (n_sample < 1) throw ContractError("cast_rays: n_sample must be >= 1");
    if (cam.height < 1 || cam.width < 1) throw ContractError("cast_rays: empty image");
    const scene::Mat3 kinv = scene::inverse(cam.K);
    RayBundle rays;
    rays.height = cam.height;
    rays.width = cam.width;
    rays.origin = cam.center();
    rays.step = step;
    rays.n_sample = n_sample;
    rays.directions.resize(static_cast<std::size_t>(cam.height * cam.width));
    for (std::int64_t r = 0; r < cam.height; ++r)
        for (std::int64_t c = 0; c < cam.width; ++c) {
            const Vec3 d = scene::mul(cam.R, scene::mul(kinv, Vec3{c + 0.5, r + 0.5, 1.0}));
            const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            rays.directions[static_cast<std::size_t>(r * cam.width + c)] = {d[0] / n, d[1] / n, d[2] / n};
        }
    return rays;
}

RayFeatureMap ors_project(const OccupancyGrid& grid, const RayBundle& rays, Source source) {
    grid.validate();
    const std::int64_t n = rays.n_sample;
    RayFeatureMap out{Tensor({rays.height, rays.width, n}), source};
    double* v = out.values.data().data();
    const double inv_max = 1.0 / static_cast<double>(scene::kMaxCode);
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rays.height; ++r)
        for (std::int64_t c = 0; c < rays.width; ++c)
            for (std::int64_t i = 0; i < n; ++i)
                v[(r * rays.width + c) * n + i] = grid.lookup(rays.sample_point(r, c, i)) * inv_max;
    return out;
}

std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    auto cross = [](const std::array<double, 2>& o, const std::array<double, 2>& a, const std::array<double, 2>& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<std::array<double, 2>> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

bool inside_convex(const std::vector<std::array<double, 2>>& hull, double x, double y) {
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        if ((b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) < 0.0) return false;
    }
    return true;
}

ForegroundMask rasterize_fgm_mask(const scene::BoxSet& boxes, const CameraModel& cam, std::int64_t latent_height,
                                  std::int64_t latent_width, double lambda_fg) {
    if (!(lambda_fg >= 0.0)) throw ContractError("rasterize_fgm_mask: lambda_fg must be >= 0");
    if (latent_height < 1 || latent_width < 1) throw ContractError("rasterize_fgm_mask: empty latent size");
    const double sx = static_cast<double>(latent_width) / static_cast<double>(cam.width);
    const double sy = static_cast<double>(latent_height) / static_cast<double>(cam.height);
    const scene::Mat3 rinv = scene::transpose(cam.R);
    const Vec3 center = cam.center();
    const auto total = static_cast<double>(latent_height * latent_width);

    std::vector<std::int64_t> best(static_cast<std::size_t>(latent_height * latent_width),
                                   std::numeric_limits<std::int64_t>::max());
    for (const auto& box : boxes) {
        std::vector<std::array<double, 2>> pts;
        for (const auto& p : box.corners) {
            const Vec3 pc = scene::mul(rinv, {p[0] - center[0], p[1] - center[1], p[2] - center[2]});
            if (pc[2] <= 1e-9) continue;  // behind the camera
            const Vec3 pix = scene::mul(cam.K, pc);
            pts.push_back({pix[0] / pix[2] * sx, pix[1] / pix[2] * sy});
        }
        const auto hull = convex_hull(std::move(pts));
        if (hull.size() < 3) continue;
        std::vector<std::size_t> covered;
        for (std::int64_t r = 0; r < latent_height; ++r)
            for (std::int64_t c = 0; c < latent_width; ++c)
                if (inside_convex(hull, c + 0.5, r + 0.5)) covered.push_back(static_cast<std::size_t>(r * latent_width + c));
        const auto area = static_cast<std::int64_t>(covered.size());
        for (auto idx : covered) best[idx] = std::min(best[idx], area);
    }
    ForegroundMask mask{Tensor({latent_height, latent_width}), lambda_fg};
    for (std::size_t i = 0; i < best.size(); ++i) {
        mask.weights[i] = best[i] == std::numeric_limits<std::int64_t>::max()
                              ? 1.0
                              : 1.0 + lambda_fg - lambda_fg * static_cast<double>(best[i]) / total;
    }
    return mask;
}

}  // namespace ddfx::ors
