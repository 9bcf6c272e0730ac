#include "ddfx/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ddfx/errors.hpp"
#include "ddfx/rng.hpp"
#include "json.hpp"

namespace ddfx::scene {

using json = nlohmann::ordered_json;

const CategoryTables& category_tables() {
    static const CategoryTables tables{};
    return tables;
}

const std::map<int, std::array<double, 3>>& category_colors() {
    static const std::map<int, std::array<double, 3>> colors{
        {kVehicle, {0.9, 0.15, 0.1}},
        {kPedestrian, {0.85, 0.75, 0.1}},
        {kRoad, {0.0, 0.25, 0.35}},
        {kLaneMarking, {0.0, 0.8, 0.8}},
    };
    return colors;
}

const std::vector<std::string>& caption_vocabulary() {
    static const std::vector<std::string> vocab{"day", "night", "dusk", "clear", "rain", "fog"};
    return vocab;
}

// ---------------------------------------------------------------- geometry

Mat3 inverse(const Mat3& m) {
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (std::abs(det) < 1e-12) throw ContractError("inverse: singular 3x3 matrix");
    const double s = 1.0 / det;
    Mat3 r{};
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * s;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * s;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * s;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * s;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * s;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * s;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * s;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * s;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * s;
    return r;
}

Vec3 mul(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2], m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

Mat3 transpose(const Mat3& m) {
    Mat3 t{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
    return t;
}

Vec3 back_project(const CameraModel& cam, const Vec3& s_img) {
    const Vec3 d = mul(cam.R, mul(inverse(cam.K), s_img));
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    return {d[0] / n, d[1] / n, d[2] / n};
}

std::array<Vec3, 8> box_corners(const Vec3& lo, const Vec3& hi) {
    std::array<Vec3, 8> c{};
    for (int b = 0; b < 8; ++b) c[b] = {(b & 1) ? hi[0] : lo[0], (b & 2) ? hi[1] : lo[1], (b & 4) ? hi[2] : lo[2]};
    return c;
}

// ------------------------------------------------------------- validation

OccupancyGrid OccupancyGrid::empty(std::array<std::int64_t, 3> dims, Vec3 origin, double voxel_size) {
    OccupancyGrid g;
    g.dims = dims;
    g.origin = origin;
    g.voxel_size = voxel_size;
    g.cells.assign(static_cast<std::size_t>(std::max<std::int64_t>(0, dims[0] * dims[1] * dims[2])), 0);
    return g;
}

std::array<std::int64_t, 3> OccupancyGrid::voxel_of(const Vec3& p) const {
    std::array<std::int64_t, 3> v{};
    for (int a = 0; a < 3; ++a) {
        const double f = std::floor((p[a] - origin[a]) / voxel_size);
        if (!(f >= 0.0) || f >= static_cast<double>(dims[a])) return {-1, -1, -1};
        v[a] = static_cast<std::int64_t>(f);
    }
    return v;
}

int OccupancyGrid::lookup(const Vec3& p) const {
    const auto v = voxel_of(p);
    return v[0] < 0 ? 0 : at(v[0], v[1], v[2]);
}

void OccupancyGrid::validate() const {
    for (auto d : dims)
        if (d < 1) throw ValidationError("occupancy grid: every extent must be >= 1");
    if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) throw ValidationError("occupancy grid: voxel_size must be > 0");
    if (cells.size() != static_cast<std::size_t>(dims[0] * dims[1] * dims[2]))
        throw ValidationError("occupancy grid: cell count does not match dims");
    const auto& tables = category_tables();
    for (auto c : cells)
        if (!tables.is_known(c)) throw ValidationError("occupancy grid: unknown category code " + std::to_string(c));
}

void CameraModel::validate() const {
    if (height < 1 || width < 1) throw ValidationError("camera: image size must be >= 1");
    try {
        (void)inverse(K);
    } catch (const ContractError&) {
        throw ValidationError("camera: intrinsics K are singular");
    }
    const Mat3 rtr = [&] {
        Mat3 m{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) m[i][j] += R[k][i] * R[k][j];
        return m;
    }();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (std::abs(rtr[i][j] - (i == j ? 1.0 : 0.0)) > 1e-9)
                throw ValidationError("camera: rotation R is not orthonormal");
    const double det = R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) -
                       R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
                       R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
    if (std::abs(det - 1.0) > 1e-9) throw ValidationError("camera: rotation R must have determinant +1");
}

void SceneClip::validate() const {
    if (frames.empty()) throw ValidationError("scene: at least one frame required");
    const auto& tables = category_tables();
    for (const auto& f : frames) {
        f.grid.validate();
        f.camera.validate();
        if (f.camera.height != frames[0].camera.height || f.camera.width != frames[0].camera.width)
            throw ValidationError("scene: frames disagree on image size");
        if (f.image.height != f.camera.height || f.image.width != f.camera.width ||
            f.image.data.size() != static_cast<std::size_t>(f.image.height * f.image.width * 3))
            throw ValidationError("scene: reference image does not match camera image size");
        for (const auto& b : f.boxes)
            if (!tables.is_box(b.category))
                throw ValidationError("scene: unknown box category code " + std::to_string(b.category));
    }
    for (const auto& m : map) {
        if (!tables.is_map(m.category))
            throw ValidationError("scene: unknown map category code " + std::to_string(m.category));
        for (std::size_t i = 1; i < m.points.size(); ++i)
            if (m.points[i] == m.points[i - 1]) throw ValidationError("scene: repeated consecutive map point");
    }
    const auto& vocab = caption_vocabulary();
    for (const auto& w : caption)
        if (std::find(vocab.begin(), vocab.end(), w) == vocab.end())
            throw ValidationError("scene: caption token '" + w + "' not in vocabulary");
}

void SceneSpec::validate() const {
    if (frames < 1) throw ValidationError("scene spec: frames must be >= 1");
    if (min_boxes < 0 || max_boxes < min_boxes) throw ValidationError("scene spec: invalid box count range");
    for (auto d : grid_dims)
        if (d < 4) throw ValidationError("scene spec: grid extents must be >= 4");
    if (!(voxel_size > 0.0)) throw ValidationError("scene spec: voxel_size must be > 0");
    if (image_height < 1 || image_width < 1) throw ValidationError("scene spec: image size must be >= 1");
    if (!(focal > 0.0)) throw ValidationError("scene spec: focal must be > 0");
    if (!(road_half_width_min > 0.0) || road_half_width_max < road_half_width_min)
        throw ValidationError("scene spec: invalid road width range");
    const double width_m = static_cast<double>(grid_dims[0]) * voxel_size;
    if (2.0 * (road_half_width_max + 0.4) > width_m) throw ValidationError("scene spec: road band exceeds grid width");
    const double height_m = static_cast<double>(grid_dims[2]) * voxel_size;
    if (camera_height <= 0.0 || camera_height >= height_m)
        throw ValidationError("scene spec: camera height outside grid bounds");
    if (max_speed < 0.0) throw ValidationError("scene spec: max_speed must be >= 0");
}

// ------------------------------------------------------------- generation

namespace {

struct BoxPlan {
    int category;
    Vec3 lo, size;
    double speed;
};

Vec3 box_lo_at(const BoxPlan& b, std::int64_t frame) {
    return {b.lo[0], b.lo[1] + b.speed * static_cast<double>(frame), b.lo[2]};
}

void voxelize_box(OccupancyGrid& g, int code, const Vec3& lo, const Vec3& hi) {
    for (std::int64_t i = 0; i < g.dims[0]; ++i)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t k = 0; k < g.dims[2]; ++k) {
                const Vec3 c{g.origin[0] + (i + 0.5) * g.voxel_size, g.origin[1] + (j + 0.5) * g.voxel_size,
                             g.origin[2] + (k + 0.5) * g.voxel_size};
                if (c[0] >= lo[0] && c[0] <= hi[0] && c[1] >= lo[1] && c[1] <= hi[1] && c[2] >= lo[2] && c[2] <= hi[2])
                    g.cells[g.index(i, j, k)] = static_cast<std::uint8_t>(code);
            }
}

CameraModel make_camera(const SceneSpec& spec) {
    CameraModel cam;
    cam.height = spec.image_height;
    cam.width = spec.image_width;
    cam.K = {{{spec.focal, 0.0, spec.image_width / 2.0}, {0.0, spec.focal, spec.image_height / 2.0}, {0.0, 0.0, 1.0}}};
    const double p = spec.pitch_deg * std::numbers::pi / 180.0;
    const double s = std::sin(p), c = std::cos(p);
    // Columns: camera right, camera down, camera forward (in world axes).
    cam.R = {{{1.0, 0.0, 0.0}, {0.0, -s, c}, {0.0, -c, -s}}};
    cam.p_ego = {static_cast<double>(spec.grid_dims[0]) * spec.voxel_size / 2.0, 0.1, 0.0};
    cam.T = {0.0, 0.0, spec.camera_height};
    return cam;
}

}  // namespace

SceneClip generate_synthetic_scene(std::uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    Rng rng(seed);
    SceneClip clip;
    clip.seed = seed;

    const auto& vocab = caption_vocabulary();
    clip.caption = {vocab[static_cast<std::size_t>(rng.uniform_int(0, 2))],
                    vocab[static_cast<std::size_t>(rng.uniform_int(3, 5))]};

    const double vs = spec.voxel_size;
    const double width_m = static_cast<double>(spec.grid_dims[0]) * vs;
    const double depth_m = static_cast<double>(spec.grid_dims[1]) * vs;
    const double half_width = rng.uniform(spec.road_half_width_min, spec.road_half_width_max);
    const double road_cx = width_m / 2.0 + rng.uniform(-0.2, 0.2);
    if (road_cx - half_width < 0.0 || road_cx + half_width > width_m)
        throw ValidationError("scene spec: road band exceeds grid width");

    OccupancyGrid road = OccupancyGrid::empty(spec.grid_dims, {0.0, 0.0, 0.0}, vs);
    for (std::int64_t i = 0; i < road.dims[0]; ++i) {
        const double x = (i + 0.5) * vs;
        if (std::abs(x - road_cx) > half_width) continue;
        const bool lane = std::abs(x - road_cx) < vs / 2.0 + 1e-12;
        for (std::int64_t j = 0; j < road.dims[1]; ++j)
            road.cells[road.index(i, j, 0)] = static_cast<std::uint8_t>(lane && (j / 3) % 2 == 0 ? kLaneMarking : kRoad);
    }

    const double y0 = 0.2, y1 = depth_m - 0.2;
    auto polyline = [&](int code, double x) {
        MapElement m;
        m.category = code;
        for (int p = 0; p < 8; ++p) m.points[p] = {x, y0 + (y1 - y0) * p / 7.0, vs};
        return m;
    };
    clip.map = {polyline(kRoad, road_cx - half_width), polyline(kRoad, road_cx + half_width),
                polyline(kLaneMarking, road_cx)};

    // Place boxes on the road so they stay inside the grid and apart for every frame.
    const auto n_boxes = rng.uniform_int(spec.min_boxes, spec.max_boxes);
    const double travel_frames = static_cast<double>(spec.frames - 1);
    std::vector<BoxPlan> plans;
    for (std::int64_t b = 0; b < n_boxes; ++b) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            BoxPlan p;
            p.category = rng.uniform() < 0.7 ? kVehicle : kPedestrian;
            p.size = p.category == kVehicle ? Vec3{0.8, 1.4, 0.6} : Vec3{0.4, 0.4, 0.8};
            p.speed = rng.uniform(-spec.max_speed, spec.max_speed);
            const double xlo = road_cx - half_width, xhi = road_cx + half_width - p.size[0];
            const double ymin = 1.0, ymax = depth_m - 0.3 - p.size[1];
            const double lo_y = std::max(ymin, ymin - p.speed * travel_frames);
            const double hi_y = std::min(ymax, ymax - p.speed * travel_frames);
            if (xhi < xlo || hi_y < lo_y) continue;
            p.lo = {rng.uniform(xlo, xhi), rng.uniform(lo_y, hi_y), vs};
            bool clear = p.lo[2] + p.size[2] < static_cast<double>(spec.grid_dims[2]) * vs;
            for (const auto& q : plans) {
                for (std::int64_t f = 0; f < spec.frames && clear; ++f) {
                    const Vec3 a = box_lo_at(p, f), c = box_lo_at(q, f);
                    const bool apart = a[0] + p.size[0] + 0.2 < c[0] || c[0] + q.size[0] + 0.2 < a[0] ||
                                       a[1] + p.size[1] + 0.2 < c[1] || c[1] + q.size[1] + 0.2 < a[1];
                    clear = apart;
                }
            }
            if (clear) {
                plans.push_back(p);
                placed = true;
            }
        }
        if (!placed) throw ValidationError("scene spec exceeds grid capacity: cannot place " + std::to_string(n_boxes) + " boxes");
    }

    const CameraModel cam = make_camera(spec);
    for (std::int64_t f = 0; f < spec.frames; ++f) {
        Frame fr;
        fr.grid = road;
        for (const auto& p : plans) {
            const Vec3 lo = box_lo_at(p, f);
            const Vec3 hi{lo[0] + p.size[0], lo[1] + p.size[1], lo[2] + p.size[2]};
            voxelize_box(fr.grid, p.category, lo, hi);
            fr.boxes.push_back({p.category, box_corners(lo, hi)});
        }
        fr.camera = cam;
        fr.image = render_reference(fr.grid, cam);
        clip.frames.push_back(std::move(fr));
    }
    return clip;
}

std::pair<OccupancyGrid, OccupancyGrid> split_fg_bg(const OccupancyGrid& grid) {
    const auto& tables = category_tables();
    OccupancyGrid fg = grid, bg = grid;
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const int c = grid.cells[i];
        if (c != kEmpty && !tables.is_box(c) && !tables.is_map(c))
            throw ValidationError("split_fg_bg: unknown category code " + std::to_string(c));
        fg.cells[i] = tables.is_box(c) ? grid.cells[i] : 0;
        bg.cells[i] = tables.is_map(c) ? grid.cells[i] : 0;
    }
    return {std::move(fg), std::move(bg)};
}

// -------------------------------------------------------------- rendering

std::int64_t render_steps(const OccupancyGrid& grid, const CameraModel& cam) {
    const Vec3 o = cam.center();
    double far = 0.0;
    for (int b = 0; b < 8; ++b) {
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double corner = grid.origin[a] + ((b >> a) & 1 ? grid.dims[a] * grid.voxel_size : 0.0);
            d2 += (corner - o[a]) * (corner - o[a]);
        }
        far = std::max(far, std::sqrt(d2));
    }
    return static_cast<std::int64_t>(std::ceil(far / render_step(grid))) + 1;
}

Image render_reference(const OccupancyGrid& grid, const CameraModel& cam) {
    grid.validate();
    cam.validate();
    Image img{cam.height, cam.width, std::vector<double>(static_cast<std::size_t>(cam.height * cam.width * 3), 0.0)};
    const Vec3 o = cam.center();
    const double step = render_step(grid);
    const std::int64_t steps = render_steps(grid, cam);
    const auto& colors = category_colors();
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < cam.height; ++r)
        for (std::int64_t c = 0; c < cam.width; ++c) {
            const Vec3 d = back_project(cam, {c + 0.5, r + 0.5, 1.0});
            for (std::int64_t i = 0; i < steps; ++i) {
                const double t = step * static_cast<double>(i);
                const int code = grid.lookup({o[0] + d[0] * t, o[1] + d[1] * t, o[2] + d[2] * t});
                if (code == kEmpty) continue;
                const auto& rgb = colors.at(code);
                const double shade = 1.0 / (1.0 + t / 10.0);
                for (int ch = 0; ch < 3; ++ch)
                    img.data[static_cast<std::size_t>((r * cam.width + c) * 3 + ch)] = rgb[ch] * shade;
                break;
            }
        }
    return img;
}

// ------------------------------------------------------------ persistence

namespace {

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
json mat3_json(const Mat3& m) { return json::array({vec3_json(m[0]), vec3_json(m[1]), vec3_json(m[2])}); }
template <std::size_t N>
json points_json(const std::array<Vec3, N>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back(vec3_json(p));
    return a;
}

const json& field(const json& j, const char* key, const std::string& ctx) {
    if (!j.is_object()) throw ParseError(ctx + ": expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(ctx + ": missing field '" + key + "'");
    return *it;
}

double num(const json& j, const std::string& ctx) {
    if (!j.is_number()) throw ParseError(ctx + ": expected a number");
    return j.get<double>();
}

std::int64_t integer(const json& j, const std::string& ctx) {
    if (!j.is_number_integer()) throw ParseError(ctx + ": expected an integer");
    return j.get<std::int64_t>();
}

const json& array(const json& j, const std::string& ctx, std::size_t expect = static_cast<std::size_t>(-1)) {
    if (!j.is_array()) throw ParseError(ctx + ": expected an array");
    if (expect != static_cast<std::size_t>(-1) && j.size() != expect)
        throw ParseError(ctx + ": expected " + std::to_string(expect) + " entries, got " + std::to_string(j.size()));
    return j;
}

Vec3 read_vec3(const json& j, const std::string& ctx) {
    const auto& a = array(j, ctx, 3);
    return {num(a[0], ctx + "[0]"), num(a[1], ctx + "[1]"), num(a[2], ctx + "[2]")};
}

Mat3 read_mat3(const json& j, const std::string& ctx) {
    const auto& a = array(j, ctx, 3);
    return {read_vec3(a[0], ctx + "[0]"), read_vec3(a[1], ctx + "[1]"), read_vec3(a[2], ctx + "[2]")};
}

std::array<Vec3, 8> read_points(const json& j, const std::string& ctx) {
    const auto& a = array(j, ctx, 8);
    std::array<Vec3, 8> p{};
    for (std::size_t i = 0; i < 8; ++i) p[i] = read_vec3(a[i], ctx + "[" + std::to_string(i) + "]");
    return p;
}

int read_code(const json& j, const std::string& ctx) {
    const auto c = integer(j, ctx);
    if (c < 0 || c > 255) throw ValidationError(ctx + ": category code " + std::to_string(c) + " out of range");
    return static_cast<int>(c);
}

json tables_json() {
    const auto& t = category_tables();
    json box = json::object(), map = json::object(), colors = json::object();
    for (const auto& [k, v] : t.box) box[std::to_string(k)] = v;
    for (const auto& [k, v] : t.map) map[std::to_string(k)] = v;
    for (const auto& [k, v] : category_colors()) colors[std::to_string(k)] = json::array({v[0], v[1], v[2]});
    return json{{"box", box}, {"map", map}, {"colors", colors}};
}

}  // namespace

std::string scene_to_string(const SceneClip& clip) {
    json j;
    j["format"] = "ddfx-scene";
    j["version"] = 1;
    j["seed"] = clip.seed;
    j["categories"] = tables_json();
    j["caption"] = clip.caption;
    json map = json::array();
    for (const auto& m : clip.map) map.push_back(json{{"category", m.category}, {"points", points_json(m.points)}});
    j["map"] = map;
    json frames = json::array();
    for (const auto& f : clip.frames) {
        json boxes = json::array();
        for (const auto& b : f.boxes) boxes.push_back(json{{"category", b.category}, {"corners", points_json(b.corners)}});
        json cells = json::array();
        for (auto c : f.grid.cells) cells.push_back(static_cast<int>(c));
        frames.push_back(json{
            {"grid",
             {{"dims", f.grid.dims}, {"origin", vec3_json(f.grid.origin)}, {"voxel_size", f.grid.voxel_size}, {"cells", cells}}},
            {"boxes", boxes},
            {"camera",
             {{"K", mat3_json(f.camera.K)},
              {"R", mat3_json(f.camera.R)},
              {"T", vec3_json(f.camera.T)},
              {"p_ego", vec3_json(f.camera.p_ego)},
              {"image_size", {f.camera.height, f.camera.width}}}},
            {"image", {{"height", f.image.height}, {"width", f.image.width}, {"data", f.image.data}}},
        });
    }
    j["frames"] = frames;
    return j.dump() + "\n";
}

SceneClip scene_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ParseError("scene file: malformed JSON at line " + std::to_string(line) + ", column " +
                         std::to_string(col) + ": " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "ddfx-scene") throw ParseError("scene file: not a ddfx-scene document");
    if (integer(field(j, "version", "scene"), "scene.version") != 1) throw ParseError("scene file: unsupported version");

    SceneClip clip;
    const auto& seed = field(j, "seed", "scene");
    if (!seed.is_number_unsigned() && !seed.is_number_integer()) throw ParseError("scene.seed: expected an integer");
    clip.seed = seed.get<std::uint64_t>();
    for (const auto& w : array(field(j, "caption", "scene"), "scene.caption")) {
        if (!w.is_string()) throw ParseError("scene.caption: expected strings");
        clip.caption.push_back(w.get<std::string>());
    }
    const auto& map = array(field(j, "map", "scene"), "scene.map");
    for (std::size_t i = 0; i < map.size(); ++i) {
        const std::string ctx = "scene.map[" + std::to_string(i) + "]";
        clip.map.push_back({read_code(field(map[i], "category", ctx), ctx + ".category"),
                            read_points(field(map[i], "points", ctx), ctx + ".points")});
    }
    const auto& frames = array(field(j, "frames", "scene"), "scene.frames");
    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        const std::string ctx = "scene.frames[" + std::to_string(fi) + "]";
        const auto& fj = frames[fi];
        Frame f;
        const auto& g = field(fj, "grid", ctx);
        const auto& dims = array(field(g, "dims", ctx + ".grid"), ctx + ".grid.dims", 3);
        for (int a = 0; a < 3; ++a) f.grid.dims[a] = integer(dims[a], ctx + ".grid.dims");
        f.grid.origin = read_vec3(field(g, "origin", ctx + ".grid"), ctx + ".grid.origin");
        f.grid.voxel_size = num(field(g, "voxel_size", ctx + ".grid"), ctx + ".grid.voxel_size");
        const auto& cells = array(field(g, "cells", ctx + ".grid"), ctx + ".grid.cells");
        f.grid.cells.reserve(cells.size());
        for (const auto& c : cells) {
            const int code = read_code(c, ctx + ".grid.cells");
            if (!category_tables().is_known(code))
                throw ValidationError(ctx + ".grid.cells: unknown category code " + std::to_string(code));
            f.grid.cells.push_back(static_cast<std::uint8_t>(code));
        }
        const auto& boxes = array(field(fj, "boxes", ctx), ctx + ".boxes");
        for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
            const std::string bctx = ctx + ".boxes[" + std::to_string(bi) + "]";
            f.boxes.push_back({read_code(field(boxes[bi], "category", bctx), bctx + ".category"),
                               read_points(field(boxes[bi], "corners", bctx), bctx + ".corners")});
        }
        const auto& cam = field(fj, "camera", ctx);
        f.camera.K = read_mat3(field(cam, "K", ctx + ".camera"), ctx + ".camera.K");
        f.camera.R = read_mat3(field(cam, "R", ctx + ".camera"), ctx + ".camera.R");
        f.camera.T = read_vec3(field(cam, "T", ctx + ".camera"), ctx + ".camera.T");
        f.camera.p_ego = read_vec3(field(cam, "p_ego", ctx + ".camera"), ctx + ".camera.p_ego");
        const auto& size = array(field(cam, "image_size", ctx + ".camera"), ctx + ".camera.image_size", 2);
        f.camera.height = integer(size[0], ctx + ".camera.image_size");
        f.camera.width = integer(size[1], ctx + ".camera.image_size");
        const auto& im = field(fj, "image", ctx);
        f.image.height = integer(field(im, "height", ctx + ".image"), ctx + ".image.height");
        f.image.width = integer(field(im, "width", ctx + ".image"), ctx + ".image.width");
        for (const auto& v : array(field(im, "data", ctx + ".image"), ctx + ".image.data"))
            f.image.data.push_back(num(v, ctx + ".image.data"));
        clip.frames.push_back(std::move(f));
    }
    clip.validate();
    return clip;
}

void save_scene(const SceneClip& clip, const std::filesystem::path& path) {
    const std::string text = scene_to_string(clip);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

SceneClip load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return scene_from_string(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace ddfx::scene
