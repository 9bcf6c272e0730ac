#include "ddfx/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "ddfx/errors.hpp"

namespace ddfx::encoders {

void FourierSpec::validate() const {
    if (num_frequencies < 1) throw ConfigError("fourier: num_frequencies must be >= 1");
    if (!(base > 0.0) || !std::isfinite(base)) throw ConfigError("fourier: base must be > 0");
}

std::vector<double> fourier_embed(std::span<const double> x, const FourierSpec& spec) {
    spec.validate();
    std::vector<double> out;
    out.reserve(2 * x.size() * static_cast<std::size_t>(spec.num_frequencies));
    for (double v : x) {
        if (!std::isfinite(v)) throw NumericError("fourier_embed: non-finite input");
        double f = spec.base;
        for (std::int64_t k = 0; k < spec.num_frequencies; ++k, f *= 2.0) {
            out.push_back(std::sin(f * v));
            out.push_back(std::cos(f * v));
        }
    }
    return out;
}

EmbeddingTable::EmbeddingTable() {
    const auto& cats = scene::category_tables();
    for (const auto& [code, _] : cats.box) keys_.push_back("box:" + std::to_string(code));
    for (const auto& [code, _] : cats.map) keys_.push_back("map:" + std::to_string(code));
    for (const auto& w : scene::caption_vocabulary()) keys_.push_back("word:" + w);
    for (std::size_t i = 0; i < keys_.size(); ++i) index_[keys_[i]] = static_cast<std::int64_t>(i);
}

std::int64_t EmbeddingTable::find(const std::string& key, const std::string& what) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw ValidationError("embedding table: unknown " + what);
    return it->second;
}

std::int64_t EmbeddingTable::box_row(int code) const {
    return find("box:" + std::to_string(code), "box category " + std::to_string(code));
}
std::int64_t EmbeddingTable::map_row(int code) const {
    return find("map:" + std::to_string(code), "map category " + std::to_string(code));
}
std::int64_t EmbeddingTable::word_row(const std::string& word) const {
    return find("word:" + word, "caption token '" + word + "'");
}

namespace {

constexpr std::int64_t kCameraScalars = 21;
constexpr std::int64_t kElementScalars = 24;

void init_mlp(ParamStore& s, const std::string& prefix, std::int64_t in, std::int64_t d, std::uint64_t seed) {
    init_dense(s, prefix + "/l1", in, d, seed);
    init_dense(s, prefix + "/l2", d, d, seed);
}

Var mlp(Binding& b, const std::string& prefix, const Var& x) {
    return dense(b, prefix + "/l2", ad::silu(dense(b, prefix + "/l1", x)));
}

Var encode_elements(Binding& b, const std::string& mlp_name, const std::vector<std::int64_t>& rows,
                    const std::vector<double>& coords, const EncoderDims& dims) {
    const auto n = static_cast<std::int64_t>(rows.size());
    if (n == 0) return empty_tokens({}, dims.d);
    std::vector<double> feats;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto e = fourier_embed(std::span(coords).subspan(static_cast<std::size_t>(i * kElementScalars),
                                                                kElementScalars),
                                     dims.fourier);
        feats.insert(feats.end(), e.begin(), e.end());
    }
    const auto width = static_cast<std::int64_t>(feats.size()) / n;
    const Var emb = ad::gather_rows(b("encoders/embed"), rows);
    const Var four = constant(Tensor({n, width}, std::move(feats)));
    return mlp(b, mlp_name, ad::concat({emb, four}, 1));
}

}  // namespace

void init_encoders(ParamStore& store, const EncoderDims& dims, std::uint64_t seed) {
    dims.fourier.validate();
    if (dims.d < 1 || dims.d_cat < 1) throw ConfigError("encoders: widths must be >= 1");
    const EmbeddingTable table;
    Tensor embed = init_normal({table.rows(), dims.d_cat}, 1.0, seed, "encoders/embed");
    for (std::int64_t i = 0; i < table.rows(); ++i)
        for (std::int64_t j = 0; j < i; ++j) {
            bool same = true;
            for (std::int64_t c = 0; c < dims.d_cat && same; ++c)
                same = embed[static_cast<std::size_t>(i * dims.d_cat + c)] == embed[static_cast<std::size_t>(j * dims.d_cat + c)];
            if (same) throw ValidationError("embedding table: rows " + table.keys()[static_cast<std::size_t>(i)] +
                                            " and " + table.keys()[static_cast<std::size_t>(j)] + " coincide");
        }
    store.add("encoders/embed", std::move(embed));

    const std::int64_t four = 2 * dims.fourier.num_frequencies;
    init_mlp(store, "encoders/box", dims.d_cat + kElementScalars * four, dims.d, seed);
    init_mlp(store, "encoders/map", dims.d_cat + kElementScalars * four, dims.d, seed);
    init_mlp(store, "encoders/cam", kCameraScalars * four, dims.d, seed);
    store.add("encoders/text_proj",
              init_normal({dims.d, dims.d_cat}, 1.0 / std::sqrt(static_cast<double>(dims.d_cat)), seed,
                          "encoders/text_proj"));
    for (const char* n : {"encoders/null/cam", "encoders/null/box", "encoders/null/map"})
        store.add(n, init_normal({1, dims.d}, 0.1, seed, n));
}

bool encoder_trainable(const std::string& name) { return name != "encoders/text_proj"; }

Var encode_boxes(Binding& b, const scene::BoxSet& boxes, const EmbeddingTable& table, const EncoderDims& dims) {
    std::vector<std::int64_t> rows;
    std::vector<double> coords;
    for (const auto& box : boxes) {
        rows.push_back(table.box_row(box.category));
        for (const auto& p : box.corners) coords.insert(coords.end(), p.begin(), p.end());
    }
    return encode_elements(b, "encoders/box", rows, coords, dims);
}

Var encode_map(Binding& b, const scene::VectorMap& map, const EmbeddingTable& table, const EncoderDims& dims) {
    std::vector<std::int64_t> rows;
    std::vector<double> coords;
    for (const auto& el : map) {
        rows.push_back(table.map_row(el.category));
        for (const auto& p : el.points) coords.insert(coords.end(), p.begin(), p.end());
    }
    return encode_elements(b, "encoders/map", rows, coords, dims);
}

Var encode_text(Binding& b, const std::vector<std::string>& caption, const EmbeddingTable& table,
                const EncoderDims& dims) {
    if (caption.empty()) return empty_tokens({}, dims.d);
    std::vector<std::int64_t> rows;
    for (const auto& w : caption) rows.push_back(table.word_row(w));
    return ad::linear(ad::gather_rows(b("encoders/embed"), rows), b("encoders/text_proj"));
}

Var encode_camera(Binding& b, const scene::CameraModel& cam, const EncoderDims& dims) {
    std::vector<double> flat;
    for (const auto& row : cam.K) flat.insert(flat.end(), row.begin(), row.end());
    for (const auto& row : cam.R) flat.insert(flat.end(), row.begin(), row.end());
    flat.insert(flat.end(), cam.T.begin(), cam.T.end());
    auto f = fourier_embed(flat, dims.fourier);
    const auto width = static_cast<std::int64_t>(f.size());
    return mlp(b, "encoders/cam", constant(Tensor({1, width}, std::move(f))));
}

Var empty_tokens(Shape lead, std::int64_t d) {
    lead.push_back(0);
    lead.push_back(d);
    return constant(Tensor(std::move(lead)));
}

Var concat_tokens(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_tokens: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.size() < 2) throw ContractError("concat_tokens: rank < 2 input " + shape_str(s0));
    const std::size_t axis = s0.size() - 2;
    std::vector<Var> live;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() || s.back() != s0.back() || !std::equal(s.begin(), s.begin() + axis, s0.begin()))
            throw ContractError("concat_tokens: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
        if (s[axis] > 0) live.push_back(p);
    }
    if (live.empty()) return parts[0];
    if (live.size() == 1) return live[0];
    return ad::concat(live, axis);
}

ConditionBundle assemble_conditions(Var c_cam, Var c_text, Var c_box, Var c_map) {
    ConditionBundle cb{std::move(c_cam), std::move(c_text), std::move(c_box), std::move(c_map), {}, {}};
    cb.c_fg = concat_tokens({cb.c_cam, cb.c_text, cb.c_box});
    cb.c_bg = concat_tokens({cb.c_cam, cb.c_text, cb.c_map});
    return cb;
}

}  // namespace ddfx::encoders
