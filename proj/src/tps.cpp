#include "fwn/tps.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace fwn {

namespace {

constexpr double kKernelRegularization = 1e-6;
constexpr int kSys = kTpsPoints + 3;  // 9 radial + 3 affine

double tps_kernel(double r2) {
    return r2 > 0.0 ? r2 * std::log(r2) : 0.0;  // U(0) = 0
}

// [K + eps*I, P; P^T, 0] with P rows (1, x, y). Symmetric.
Eigen::Matrix<double, kSys, kSys> system_matrix(const TpsPoints& grid) {
    Eigen::Matrix<double, kSys, kSys> L = Eigen::Matrix<double, kSys, kSys>::Zero();
    for (int i = 0; i < kTpsPoints; ++i) {
        for (int j = 0; j < kTpsPoints; ++j) {
            const double dx = grid[i].x - grid[j].x;
            const double dy = grid[i].y - grid[j].y;
            L(i, j) = tps_kernel(dx * dx + dy * dy);
        }
        L(i, i) += kKernelRegularization;
        L(i, kTpsPoints) = L(kTpsPoints, i) = 1.0;
        L(i, kTpsPoints + 1) = L(kTpsPoints + 1, i) = grid[i].x;
        L(i, kTpsPoints + 2) = L(kTpsPoints + 2, i) = grid[i].y;
    }
    return L;
}

// Basis vector phi(q) = (1, x, y, U(|q - g_1|^2), ..., U(|q - g_K|^2)).
std::array<double, kSys> basis(const TpsPoints& grid, double nx, double ny) {
    std::array<double, kSys> phi;
    phi[0] = 1.0;
    phi[1] = nx;
    phi[2] = ny;
    for (int k = 0; k < kTpsPoints; ++k) {
        const double dx = nx - grid[k].x;
        const double dy = ny - grid[k].y;
        phi[3 + k] = tps_kernel(dx * dx + dy * dy);
    }
    return phi;
}

}  // namespace

TpsPoints tps_lattice() {
    TpsPoints pts;
    int k = 0;
    for (int gy = -1; gy <= 1; ++gy)
        for (int gx = -1; gx <= 1; ++gx) pts[k++] = Vec2{static_cast<double>(gx), static_cast<double>(gy)};
    return pts;
}

TpsTransform fit_tps(const TpsPoints& grid_points, const TpsPoints& theta) {
    for (int i = 0; i < kTpsPoints; ++i)
        for (int j = i + 1; j < kTpsPoints; ++j)
            if (grid_points[i].x == grid_points[j].x && grid_points[i].y == grid_points[j].y)
                throw ContractError("fit_tps: grid points must be distinct");

    const auto L = system_matrix(grid_points);
    Eigen::FullPivLU<Eigen::Matrix<double, kSys, kSys>> lu(L);
    if (!lu.isInvertible()) throw NumericalError("fit_tps: singular TPS system");

    TpsTransform t;
    t.grid_points = grid_points;
    t.theta = theta;
    for (int d = 0; d < 2; ++d) {
        Eigen::Matrix<double, kSys, 1> rhs = Eigen::Matrix<double, kSys, 1>::Zero();
        for (int i = 0; i < kTpsPoints; ++i) rhs(i) = d == 0 ? theta[i].x : theta[i].y;
        Eigen::Matrix<double, kSys, 1> c = lu.solve(rhs);
        // Store affine first, then radial weights.
        t.coeffs[d][0] = c(kTpsPoints);
        t.coeffs[d][1] = c(kTpsPoints + 1);
        t.coeffs[d][2] = c(kTpsPoints + 2);
        for (int k = 0; k < kTpsPoints; ++k) t.coeffs[d][3 + k] = c(k);
    }
    return t;
}

Vec2 tps_apply(const TpsTransform& t, double nx, double ny) {
    const auto phi = basis(t.grid_points, nx, ny);
    Vec2 out;
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < kSys; ++i) {
        sx += t.coeffs[0][i] * phi[i];
        sy += t.coeffs[1][i] * phi[i];
    }
    out.x = sx;
    out.y = sy;
    return out;
}

FlowField tps_to_flow(const TpsTransform& t, int height, int width) {
    if (height <= 0 || width <= 0) throw ContractError("tps_to_flow: non-positive dimensions");
    FlowField flow(height, width);
    const double sx = width > 1 ? (width - 1) / 2.0 : 0.5;
    const double sy = height > 1 ? (height - 1) / 2.0 : 0.5;
    for (int y = 0; y < height; ++y) {
        const double ny = y / sy - 1.0;
        for (int x = 0; x < width; ++x) {
            const double nx = x / sx - 1.0;
            const Vec2 m = tps_apply(t, nx, ny);
            // Source pixel position (x', y').
            const double px = (m.x + 1.0) * sx;
            const double py = (m.y + 1.0) * sy;
            flow.set(x, y, px - x, py - y);
        }
    }
    return flow;
}

TpsPoints tps_flow_grad(const TpsTransform& t, const FlowField& upstream) {
    const int height = upstream.height, width = upstream.width;
    const double sx = width > 1 ? (width - 1) / 2.0 : 0.5;
    const double sy = height > 1 ? (height - 1) / 2.0 : 0.5;

    // flow_d = scale_d * (phi(p) . c_d) + const(p), c_d = L^{-1} [theta_d; 0].
    // Adjoint: dL/dtheta_d = first K rows of L^{-1} (sum_p upstream_d(p) * scale_d * phi(p)),
    // using that L is symmetric.
    Eigen::Matrix<double, kSys, 1> vx = Eigen::Matrix<double, kSys, 1>::Zero();
    Eigen::Matrix<double, kSys, 1> vy = Eigen::Matrix<double, kSys, 1>::Zero();
    for (int y = 0; y < height; ++y) {
        const double ny = y / sy - 1.0;
        for (int x = 0; x < width; ++x) {
            const double nx = x / sx - 1.0;
            const double ux = upstream.dx(x, y) * sx;
            const double uy = upstream.dy(x, y) * sy;
            if (ux == 0.0 && uy == 0.0) continue;
            const auto phi = basis(t.grid_points, nx, ny);
            for (int i = 0; i < kSys; ++i) {
                vx(i) += ux * phi[i];
                vy(i) += uy * phi[i];
            }
        }
    }
    const auto L = system_matrix(t.grid_points);
    Eigen::FullPivLU<Eigen::Matrix<double, kSys, kSys>> lu(L);
    if (!lu.isInvertible()) throw NumericalError("tps_flow_grad: singular TPS system");
    // basis() orders affine first; the system solution vector orders radial
    // first, so permute before solving.
    Eigen::Matrix<double, kSys, 1> px = Eigen::Matrix<double, kSys, 1>::Zero();
    Eigen::Matrix<double, kSys, 1> py = Eigen::Matrix<double, kSys, 1>::Zero();
    for (int k = 0; k < kTpsPoints; ++k) {
        px(k) = vx(3 + k);
        py(k) = vy(3 + k);
    }
    for (int a = 0; a < 3; ++a) {
        px(kTpsPoints + a) = vx(a);
        py(kTpsPoints + a) = vy(a);
    }
    const Eigen::Matrix<double, kSys, 1> zx = lu.solve(px);
    const Eigen::Matrix<double, kSys, 1> zy = lu.solve(py);
    TpsPoints grad;
    for (int k = 0; k < kTpsPoints; ++k) grad[k] = Vec2{zx(k), zy(k)};
    return grad;
}

CorrelationMap correlation(const ImageTensor& feat_a, const ImageTensor& feat_b) {
    if (!feat_a.same_shape(feat_b)) throw ContractError("correlation: feature shapes differ");
    const int H = feat_a.height, W = feat_a.width, C = feat_a.channels;
    const int N = H * W;
    constexpr double kEps = 1e-8;

    auto normalized = [&](const ImageTensor& f) {
        std::vector<double> out(f.data.size());
        for (int p = 0; p < N; ++p) {
            double ss = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = f.data[static_cast<std::size_t>(p) * C + c];
                ss += v * v;
            }
            const double inv = 1.0 / std::sqrt(ss + kEps * kEps);
            for (int c = 0; c < C; ++c)
                out[static_cast<std::size_t>(p) * C + c] = f.data[static_cast<std::size_t>(p) * C + c] * inv;
        }
        return out;
    };
    const std::vector<double> na = normalized(feat_a);
    const std::vector<double> nb = normalized(feat_b);

    CorrelationMap corr;
    corr.height = H;
    corr.width = W;
    corr.values.assign(static_cast<std::size_t>(N) * N, 0.0);
    for (int p = 0; p < N; ++p) {
        for (int q = 0; q < N; ++q) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c)
                dot += na[static_cast<std::size_t>(p) * C + c] * nb[static_cast<std::size_t>(q) * C + c];
            corr.values[static_cast<std::size_t>(p) * N + q] = dot;
        }
    }
    return corr;
}

void correlation_grad(const ImageTensor& feat_a, const ImageTensor& feat_b,
                      const CorrelationMap& upstream, ImageTensor& d_a, ImageTensor& d_b) {
    if (!feat_a.same_shape(feat_b)) throw ContractError("correlation_grad: feature shapes differ");
    const int H = feat_a.height, W = feat_a.width, C = feat_a.channels;
    const int N = H * W;
    if (upstream.height != H || upstream.width != W ||
        upstream.values.size() != static_cast<std::size_t>(N) * N)
        throw ContractError("correlation_grad: upstream shape mismatch");
    constexpr double kEps = 1e-8;

    struct Norm {
        std::vector<double> unit;  // normalized vectors
        std::vector<double> inv;   // 1 / sqrt(|v|^2 + eps^2) per position
    };
    auto normalized = [&](const ImageTensor& f) {
        Norm n;
        n.unit.resize(f.data.size());
        n.inv.resize(N);
        for (int p = 0; p < N; ++p) {
            double ss = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = f.data[static_cast<std::size_t>(p) * C + c];
                ss += v * v;
            }
            n.inv[p] = 1.0 / std::sqrt(ss + kEps * kEps);
            for (int c = 0; c < C; ++c)
                n.unit[static_cast<std::size_t>(p) * C + c] =
                    f.data[static_cast<std::size_t>(p) * C + c] * n.inv[p];
        }
        return n;
    };
    const Norm na = normalized(feat_a);
    const Norm nb = normalized(feat_b);

    d_a = ImageTensor(H, W, C);
    d_b = ImageTensor(H, W, C);

    // d corr[p,q] / d unit_a[p] = unit_b[q]; then through the normalization:
    // d raw = (d unit - unit * (unit . d unit)) * inv.
    std::vector<double> du_a(static_cast<std::size_t>(N) * C, 0.0);
    std::vector<double> du_b(static_cast<std::size_t>(N) * C, 0.0);
    for (int p = 0; p < N; ++p) {
        for (int q = 0; q < N; ++q) {
            const double u = upstream.values[static_cast<std::size_t>(p) * N + q];
            if (u == 0.0) continue;
            for (int c = 0; c < C; ++c) {
                du_a[static_cast<std::size_t>(p) * C + c] += u * nb.unit[static_cast<std::size_t>(q) * C + c];
                du_b[static_cast<std::size_t>(q) * C + c] += u * na.unit[static_cast<std::size_t>(p) * C + c];
            }
        }
    }
    auto through_norm = [&](const Norm& n, const std::vector<double>& du, ImageTensor& dst) {
        for (int p = 0; p < N; ++p) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c)
                dot += n.unit[static_cast<std::size_t>(p) * C + c] * du[static_cast<std::size_t>(p) * C + c];
            for (int c = 0; c < C; ++c)
                dst.data[static_cast<std::size_t>(p) * C + c] =
                    (du[static_cast<std::size_t>(p) * C + c] -
                     n.unit[static_cast<std::size_t>(p) * C + c] * dot) *
                    n.inv[p];
        }
    };
    through_norm(na, du_a, d_a);
    through_norm(nb, du_b, d_b);
}

}  // namespace fwn
