#pragma once

#include <cstdint>
#include <vector>

#include "ddfx/scene.hpp"
#include "ddfx/tensor.hpp"

// Occupancy ray-shape sampling: one camera ray per pixel, a fixed number of
// equally spaced samples per ray, each sample reads the voxel it falls in.

namespace ddfx::ors {

using scene::CameraModel;
using scene::OccupancyGrid;
using scene::Vec3;

struct RayBundle {
    std::int64_t height = 0, width = 0;
    std::vector<Vec3> directions;  // row-major, unit norm
    Vec3 origin{};
    double step = 0.2;
    std::int64_t n_sample = 1;

    const Vec3& direction(std::int64_t r, std::int64_t c) const {
        return directions[static_cast<std::size_t>(r * width + c)];
    }
    /// origin + r * n * i
    Vec3 sample_point(std::int64_t r, std::int64_t c, std::int64_t i) const;
};

enum class Source { foreground, background };

struct RayFeatureMap {
    Tensor values;  // [U, V, N_sample], codes / max code
    Source source = Source::foreground;
};

struct ForegroundMask {
    Tensor weights;  // [U', V']
    double lambda_fg = 1.0;
};

/// Throws ContractError for singular K or non-positive step / sample count.
RayBundle cast_rays(const CameraModel& cam, double step, std::int64_t n_sample);

RayFeatureMap ors_project(const OccupancyGrid& grid, const RayBundle& rays, Source source = Source::foreground);

/// Per-box convex hull of the projected corners, rasterized at latent
/// resolution. A covered pixel gets 1 + lambda - lambda * area / (U' V')
/// using the smallest covering hull; uncovered pixels get 1.
ForegroundMask rasterize_fgm_mask(const scene::BoxSet& boxes, const CameraModel& cam, std::int64_t latent_height,
                                  std::int64_t latent_width, double lambda_fg);

/// Andrew's monotone chain; counter-clockwise, no collinear points.
std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> pts);

/// Point inside or on the boundary of a convex polygon in CCW order.
bool inside_convex(const std::vector<std::array<double, 2>>& hull, double x, double y);

}  // namespace ddfx::ors
