#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

// Toy driving world: a categorical voxel grid with boxes and a road, one
// pinhole camera per frame, and a first-hit renderer producing the ground
// truth images.

namespace ddfx::scene {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr int kEmpty = 0;
inline constexpr int kVehicle = 1;
inline constexpr int kPedestrian = 2;
inline constexpr int kRoad = 8;
inline constexpr int kLaneMarking = 9;
inline constexpr int kMaxCode = 9;

/// Foreground (box) and background (map) category tables.
struct CategoryTables {
    std::map<int, std::string> box{{kVehicle, "vehicle"}, {kPedestrian, "pedestrian"}};
    std::map<int, std::string> map{{kRoad, "road"}, {kLaneMarking, "lane-marking"}};

    bool is_box(int code) const { return box.count(code) != 0; }
    bool is_map(int code) const { return map.count(code) != 0; }
    bool is_known(int code) const { return code == kEmpty || is_box(code) || is_map(code); }
};

const CategoryTables& category_tables();

/// RGB for each nonzero category. Channel 0 is lit only by foreground codes.
const std::map<int, std::array<double, 3>>& category_colors();

/// Caption vocabulary (time of day, then weather).
const std::vector<std::string>& caption_vocabulary();

struct OccupancyGrid {
    std::array<std::int64_t, 3> dims{1, 1, 1};  // x (lateral), y (forward), z (up)
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;
    std::vector<std::uint8_t> cells;  // x-major, then y, then z

    static OccupancyGrid empty(std::array<std::int64_t, 3> dims, Vec3 origin, double voxel_size);

    std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>((i * dims[1] + j) * dims[2] + k);
    }
    int at(std::int64_t i, std::int64_t j, std::int64_t k) const { return cells[index(i, j, k)]; }
    bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }
    /// Voxel holding a world point, or nullopt-like {-1,-1,-1} outside.
    std::array<std::int64_t, 3> voxel_of(const Vec3& p) const;
    /// Code at a world point; 0 outside the grid.
    int lookup(const Vec3& p) const;

    /// Throws ValidationError on bad dims, voxel size, cell count or codes.
    void validate() const;

    friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

struct CameraModel {
    Mat3 K{};  // intrinsics
    Mat3 R{};  // camera-to-world rotation
    Vec3 T{};  // camera center offset from ego, occupancy frame
    Vec3 p_ego{};
    std::int64_t height = 1;  // U, image rows
    std::int64_t width = 1;   // V, image columns

    Vec3 center() const { return {p_ego[0] + T[0], p_ego[1] + T[1], p_ego[2] + T[2]}; }
    void validate() const;

    friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Unit world-space direction through homogeneous image point s_img:
/// Norm(R * K^-1 * s_img). Throws ContractError for singular K.
Vec3 back_project(const CameraModel& cam, const Vec3& s_img);

Mat3 inverse(const Mat3& m);
Vec3 mul(const Mat3& m, const Vec3& v);
Mat3 transpose(const Mat3& m);

struct Box {
    int category = kVehicle;
    std::array<Vec3, 8> corners{};
    friend bool operator==(const Box&, const Box&) = default;
};
using BoxSet = std::vector<Box>;

/// Axis-aligned cuboid corners, ordered by (x, y, z) bits.
std::array<Vec3, 8> box_corners(const Vec3& lo, const Vec3& hi);

struct MapElement {
    int category = kRoad;
    std::array<Vec3, 8> points{};
    friend bool operator==(const MapElement&, const MapElement&) = default;
};
using VectorMap = std::vector<MapElement>;

/// H x W x 3, row-major.
struct Image {
    std::int64_t height = 0, width = 0;
    std::vector<double> data;
    double at(std::int64_t r, std::int64_t c, int ch) const { return data[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
    friend bool operator==(const Image&, const Image&) = default;
};

struct Frame {
    OccupancyGrid grid;
    BoxSet boxes;
    CameraModel camera;
    Image image;
    friend bool operator==(const Frame&, const Frame&) = default;
};

struct SceneClip {
    std::vector<Frame> frames;
    VectorMap map;
    std::vector<std::string> caption;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const SceneClip&, const SceneClip&) = default;
};

struct SceneSpec {
    std::int64_t frames = 4;
    std::int64_t min_boxes = 1;
    std::int64_t max_boxes = 3;
    std::array<std::int64_t, 3> grid_dims{32, 32, 10};
    double voxel_size = 0.2;
    std::int64_t image_height = 32;
    std::int64_t image_width = 32;
    double focal = 16.0;
    double camera_height = 1.0;
    double pitch_deg = 20.0;
    double road_half_width_min = 1.6;
    double road_half_width_max = 2.4;
    double max_speed = 0.3;  // meters per frame along the road

    void validate() const;
};

SceneClip generate_synthetic_scene(std::uint64_t seed, const SceneSpec& spec);

/// (foreground, background) views of a grid.
std::pair<OccupancyGrid, OccupancyGrid> split_fg_bg(const OccupancyGrid& grid);

/// Step length used by render_reference.
inline double render_step(const OccupancyGrid& grid) { return grid.voxel_size / 2.0; }
/// Number of march steps for a camera and grid (covers the whole grid).
std::int64_t render_steps(const OccupancyGrid& grid, const CameraModel& cam);

/// First-hit shading of a grid through a camera.
Image render_reference(const OccupancyGrid& grid, const CameraModel& cam);

void save_scene(const SceneClip& clip, const std::filesystem::path& path);
SceneClip load_scene(const std::filesystem::path& path);
std::string scene_to_string(const SceneClip& clip);
SceneClip scene_from_string(const std::string& text);

}  // namespace ddfx::scene
