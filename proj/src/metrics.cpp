#include "ddfx/metrics.hpp"

#include <cmath>

#include "ddfx/errors.hpp"
#include "ddfx/nn.hpp"

namespace ddfx::metrics {

GaussianStats gaussian_stats(const Tensor& features) {
    if (features.rank() != 2) throw ContractError("gaussian_stats: expected [N, d], got " + shape_str(features.shape()));
    const std::int64_t n = features.dim(0), d = features.dim(1);
    if (n < 2) throw ContractError("gaussian_stats: need at least 2 samples, got " + std::to_string(n));
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        features.data().data(), n, d);
    GaussianStats s;
    s.mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - s.mu.transpose();
    s.sigma = (c.transpose() * c) / static_cast<double>(n - 1);
    return s;
}

namespace {

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
    if (p.mu.size() != q.mu.size() || p.sigma.rows() != q.sigma.rows() || p.sigma.rows() != p.mu.size())
        throw ContractError("frechet_distance: dimension mismatch " + std::to_string(p.mu.size()) + " vs " +
                            std::to_string(q.mu.size()));
    const Eigen::MatrixXd sp = sqrt_psd(p.sigma);
    const Eigen::MatrixXd m = sp * q.sigma * sp;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (p.mu - q.mu).squaredNorm() + p.sigma.trace() + q.sigma.trace() - 2.0 * tr_sqrt;
    return std::max(d, 0.0);
}

FrameFeatureExtractor::FrameFeatureExtractor(std::int64_t height, std::int64_t width, std::uint64_t seed)
    : height_(height), width_(width) {
    if (height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4)
        throw ContractError("frame features: image size must be a positive multiple of 4");
    const std::int64_t flat = (height / 4) * (width / 4) * 8;
    conv_w_ = init_normal({8, 3, 3, 3}, 1.0 / std::sqrt(27.0), seed, "fid/conv");
    conv_b_ = init_normal({8}, 0.1, seed, "fid/conv_b");
    lin_w_ = init_normal({32, flat}, 1.0 / std::sqrt(static_cast<double>(flat)), seed, "fid/linear");
    lin_b_ = Tensor({32});
}

Var FrameFeatureExtractor::features(const Var& frames) const {
    const Shape& s = frames.shape();
    if (s.size() != 4 || s[1] != height_ || s[2] != width_ || s[3] != 3)
        throw ContractError("frame features: expected [B, " + std::to_string(height_) + ", " + std::to_string(width_) +
                            ", 3], got " + shape_str(s));
    Var h = ad::conv3x3(frames, constant(conv_w_));
    h = ad::silu(ad::add(h, ad::broadcast_to(constant(conv_b_), h.shape())));
    h = ad::avg_pool(h, 4);
    h = ad::reshape(h, {s[0], numel(h.shape()) / s[0]});
    return ad::linear(h, constant(lin_w_), constant(lin_b_));
}

double fid_analog(const Tensor& generated, const Tensor& reference, const FrameFeatureExtractor& fx) {
    if (generated.rank() != 4 || generated.dim(0) < 2 || reference.rank() != 4 || reference.dim(0) < 2)
        throw ContractError("fid_analog: need at least 2 frames per side");
    const auto fg = fx.features(constant(generated)).value();
    const auto fr = fx.features(constant(reference)).value();
    return frechet_distance(gaussian_stats(fg), gaussian_stats(fr));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: no rows");
    const auto d = static_cast<std::int64_t>(rows[0].size());
    std::vector<double> data;
    for (const auto& r : rows) {
        if (static_cast<std::int64_t>(r.size()) != d) throw ContractError("stack_rows: ragged rows");
        data.insert(data.end(), r.vec().begin(), r.vec().end());
    }
    return Tensor({static_cast<std::int64_t>(rows.size()), d}, std::move(data));
}

double controllability_iou(const Tensor& image, const Tensor& mask, double threshold) {
    if (image.rank() != 3 || image.dim(2) != 3 || mask.rank() != 2 || image.dim(0) != mask.dim(0) ||
        image.dim(1) != mask.dim(1))
        throw ContractError("controllability_iou: size mismatch " + shape_str(image.shape()) + " vs " +
                            shape_str(mask.shape()));
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const bool a = image[3 * i] > threshold;
        const bool b = mask[i] > 1.0;
        inter += a && b;
        uni += a || b;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double composite_score(double fvd, double map, double miou, const ScoreConstants& k) {
    return (k.a - fvd) / k.a + (map - k.b) / k.b + (miou - k.c) / k.c;
}

}  // namespace ddfx::metrics
