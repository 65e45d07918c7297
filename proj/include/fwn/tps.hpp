#pragma once

#include <array>

#include "fwn/grid.hpp"

namespace fwn {

inline constexpr int kTpsPoints = 9;  // 3x3 control lattice

using TpsPoints = std::array<Vec2, kTpsPoints>;

// The predefined lattice: positions {-1, 0, 1}^2 in normalized coordinates,
// row-major (y outer). Normalized coords map to pixels via
// px = (nx + 1) * (width - 1) / 2 (and likewise for y).
TpsPoints tps_lattice();

// Thin-plate-spline mapping fixed by K control-point correspondences
// grid_points -> theta, kernel U(r) = r^2 log(r^2).
struct TpsTransform {
    TpsPoints grid_points;
    TpsPoints theta;
    // Per output dimension: affine (1, x, y) then K radial weights.
    std::array<std::array<double, kTpsPoints + 3>, 2> coeffs{};
};

// Solves the TPS interpolation system with regularization 1e-6 on the kernel
// diagonal. Radial weights satisfy the usual side conditions (orthogonal to
// {1, x, y}).
TpsTransform fit_tps(const TpsPoints& grid_points, const TpsPoints& theta);

// Evaluates the fitted mapping at a normalized point.
Vec2 tps_apply(const TpsTransform& t, double nx, double ny);

// Dense backward flow: for each pixel, the position difference between the
// mapped source position and the pixel itself, in pixel units.
FlowField tps_to_flow(const TpsTransform& t, int height, int width);

// Adjoint of tps_to_flow w.r.t. theta (the flow is linear in theta).
TpsPoints tps_flow_grad(const TpsTransform& t, const FlowField& upstream);

// Pairwise similarity volume between two feature maps: every feature vector
// is L2-normalized across channels, then all position pairs are dotted.
struct CorrelationMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // (h*w) x (h*w), row = position in feat_a

    double at(int p, int q) const { return values[static_cast<std::size_t>(p) * height * width + q]; }
};

CorrelationMap correlation(const ImageTensor& feat_a, const ImageTensor& feat_b);

// Adjoints through the normalized dot products.
void correlation_grad(const ImageTensor& feat_a, const ImageTensor& feat_b,
                      const CorrelationMap& upstream, ImageTensor& d_a, ImageTensor& d_b);

}  // namespace fwn
