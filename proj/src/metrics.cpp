#include "fwn/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "fwn/warp.hpp"

namespace fwn {

namespace {

constexpr int kWin = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin * kWin>& ssim_window() {
    static const std::array<double, kWin * kWin> w = [] {
        std::array<double, kWin * kWin> out{};
        double sum = 0.0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                const double dx = x - kWin / 2, dy = y - kWin / 2;
                out[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimSigma * kSsimSigma));
                sum += out[y * kWin + x];
            }
        for (double& v : out) v /= sum;
        return out;
    }();
    return w;
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw ContractError("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_shape(b)) throw ContractError("ssim: shape mismatch");
    if (a.height < kWin || a.width < kWin) throw ContractError("ssim: image smaller than 11x11 window");
    const auto& w = ssim_window();
    const int H = a.height, W = a.width, C = a.channels;

    double total = 0.0;
    long count = 0;
    for (int y = 0; y + kWin <= H; ++y) {
        for (int x = 0; x + kWin <= W; ++x) {
            for (int c = 0; c < C; ++c) {
                double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int wy = 0; wy < kWin; ++wy)
                    for (int wx = 0; wx < kWin; ++wx) {
                        const double wt = w[wy * kWin + wx];
                        const double va = a.at(x + wx, y + wy, c);
                        const double vb = b.at(x + wx, y + wy, c);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                const double var_a = saa - ma * ma;
                const double var_b = sbb - mb * mb;
                const double cov = sab - ma * mb;
                const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
                const double den = (ma * ma + mb * mb + kC1) * (var_a + var_b + kC2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

double tcm(const std::vector<ImageTensor>& frames, const std::vector<FlowField>& lag1_flows) {
    if (frames.size() < 2) throw ContractError("tcm: need at least two frames");
    if (lag1_flows.size() != frames.size() - 1)
        throw ContractError("tcm: flow count must be frame count - 1");
    double err = 0.0;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        const ImageTensor warped = warp_backward(frames[i], lag1_flows[i]);
        const ImageTensor& cur = frames[i + 1];
        if (!cur.same_shape(warped)) throw ContractError("tcm: frame shape mismatch");
        double pair = 0.0;
        for (std::size_t j = 0; j < cur.data.size(); ++j) pair += std::abs(cur.data[j] - warped.data[j]);
        err += pair / static_cast<double>(cur.data.size());
    }
    err /= static_cast<double>(frames.size() - 1);
    return 1.0 / (1.0 + 10.0 * err);
}

}  // namespace fwn
