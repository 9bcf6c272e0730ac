#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ddfx/nn.hpp"
#include "ddfx/scene.hpp"

// Condition encoders: boxes, map polylines, captions and camera pose become
// width-d token sequences.

namespace ddfx::encoders {

struct FourierSpec {
    std::int64_t num_frequencies = 8;
    double base = 1.0;
    void validate() const;
};

/// For each input x_i and k < num_frequencies: sin(2^k base x_i), cos(2^k base x_i).
std::vector<double> fourier_embed(std::span<const double> x, const FourierSpec& spec);

/// Row layout of encoders/embed: box categories, map categories, caption words.
class EmbeddingTable {
public:
    EmbeddingTable();
    std::int64_t rows() const { return static_cast<std::int64_t>(keys_.size()); }
    std::int64_t box_row(int code) const;
    std::int64_t map_row(int code) const;
    std::int64_t word_row(const std::string& word) const;
    const std::vector<std::string>& keys() const { return keys_; }

private:
    std::int64_t find(const std::string& key, const std::string& what) const;
    std::vector<std::string> keys_;
    std::map<std::string, std::int64_t> index_;
};

struct EncoderDims {
    std::int64_t d = 32;
    std::int64_t d_cat = 32;
    FourierSpec fourier;
};

/// Adds every encoders/* parameter. Throws ValidationError if two embedding
/// rows coincide.
void init_encoders(ParamStore& store, const EncoderDims& dims, std::uint64_t seed);

/// Trainable in stage 1: everything but the frozen text projection.
bool encoder_trainable(const std::string& name);

/// One token per box, [N_box, d].
Var encode_boxes(Binding& b, const scene::BoxSet& boxes, const EmbeddingTable& table, const EncoderDims& dims);
/// One token per map element, [N_map, d].
Var encode_map(Binding& b, const scene::VectorMap& map, const EmbeddingTable& table, const EncoderDims& dims);
/// One token per caption word, [N_txt, d].
Var encode_text(Binding& b, const std::vector<std::string>& caption, const EmbeddingTable& table,
                const EncoderDims& dims);
/// Single token, [1, d].
Var encode_camera(Binding& b, const scene::CameraModel& cam, const EncoderDims& dims);

/// Token sequences on the last two axes ([..., N, d]); leading axes (frames)
/// must agree across fields.
struct ConditionBundle {
    Var c_cam, c_text, c_box, c_map;
    Var c_fg;  // [c_cam, c_text, c_box]
    Var c_bg;  // [c_cam, c_text, c_map]

    std::int64_t width() const { return c_cam.shape().back(); }
    std::int64_t tokens(const Var& v) const { return v.shape()[v.shape().size() - 2]; }
};

/// Concatenates along the token axis; empty parts are skipped. Throws
/// ContractError on width or leading-axis mismatch.
ConditionBundle assemble_conditions(Var c_cam, Var c_text, Var c_box, Var c_map);

/// Concatenation along the token axis (axis rank-2) skipping empty parts.
Var concat_tokens(const std::vector<Var>& parts);

/// Empty token sequence with the given leading axes.
Var empty_tokens(Shape lead, std::int64_t d);

}  // namespace ddfx::encoders
