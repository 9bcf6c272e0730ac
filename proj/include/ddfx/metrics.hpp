#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ddfx/autodiff.hpp"

namespace ddfx::metrics {

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

/// Sample mean and unbiased covariance of features [N, d]. N >= 2.
GaussianStats gaussian_stats(const Tensor& features);

/// |mu_p - mu_q|^2 + Tr(S_p + S_q - 2 (S_p S_q)^1/2), clamped at 0. The trace
/// term uses the symmetric form sqrt(S_p) S_q sqrt(S_p) with eigenvalues
/// clamped at 0.
double frechet_distance(const GaussianStats& p, const GaussianStats& q);

/// Frozen random per-frame features: conv3x3 3->8, silu, avgpool 4,
/// flatten, linear to 32.
class FrameFeatureExtractor {
public:
    FrameFeatureExtractor(std::int64_t height, std::int64_t width, std::uint64_t seed = 0x46494421ULL);
    /// frames [B, U, V, 3] -> [B, 32]
    Var features(const Var& frames) const;
    std::int64_t width() const { return 32; }

private:
    std::int64_t height_, width_;
    Tensor conv_w_, conv_b_, lin_w_, lin_b_;
};

/// Fréchet distance between per-frame features; frames [N, U, V, 3].
double fid_analog(const Tensor& generated, const Tensor& reference, const FrameFeatureExtractor& fx);

/// Stacks per-row feature vectors into [N, d].
Tensor stack_rows(const std::vector<Tensor>& rows);

/// Midpoint between the foreground channel-0 colors and the background's 0.
inline constexpr double kIouThreshold = 0.45;

/// IoU of (channel 0 > threshold) against (mask weight > 1). image [U, V, 3],
/// mask [U, V]. Empty union: 1 if both empty.
double controllability_iou(const Tensor& image, const Tensor& mask, double threshold);

struct ScoreConstants {
    double a = 218.12;
    double b = 11.8617;
    double c = 18.3429;
};

/// (a - fvd)/a + (map - b)/b + (miou - c)/c
double composite_score(double fvd, double map, double miou, const ScoreConstants& k = {});

}  // namespace ddfx::metrics
