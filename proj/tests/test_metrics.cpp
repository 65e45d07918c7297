#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fwn/metrics.hpp"
#include "fwn/warp.hpp"
#include "helpers.hpp"

using namespace fwn;

namespace {

// Independent SSIM route: explicit weighted central moments per window.
double ssim_oracle(const ImageTensor& a, const ImageTensor& b) {
    constexpr int kWin = 11;
    const double sigma = 1.5;
    std::vector<double> w(kWin * kWin);
    double sum = 0.0;
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
            const double dx = x - 5, dy = y - 5;
            w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += w[y * kWin + x];
        }
    for (double& v : w) v /= sum;
    const double c1 = 1e-4, c2 = 9e-4;

    double total = 0.0;
    long count = 0;
    for (int y = 0; y + kWin <= a.height; ++y)
        for (int x = 0; x + kWin <= a.width; ++x)
            for (int c = 0; c < a.channels; ++c) {
                double ma = 0, mb = 0;
                for (int wy = 0; wy < kWin; ++wy)
                    for (int wx = 0; wx < kWin; ++wx) {
                        ma += w[wy * kWin + wx] * a.at(x + wx, y + wy, c);
                        mb += w[wy * kWin + wx] * b.at(x + wx, y + wy, c);
                    }
                double va = 0, vb = 0, cov = 0;
                for (int wy = 0; wy < kWin; ++wy)
                    for (int wx = 0; wx < kWin; ++wx) {
                        const double da = a.at(x + wx, y + wy, c) - ma;
                        const double db = b.at(x + wx, y + wy, c) - mb;
                        va += w[wy * kWin + wx] * da * da;
                        vb += w[wy * kWin + wx] * db * db;
                        cov += w[wy * kWin + wx] * da * db;
                    }
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

}  // namespace

TEST_CASE("psnr basics") {
    Rng rng(501);
    const ImageTensor a = test::random_image(rng, 6, 6, 3);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) > 0);

    ImageTensor zero(4, 4, 1), half(4, 4, 1, 0.5);
    CHECK(psnr(zero, half) == doctest::Approx(10.0 * std::log10(1.0 / 0.25)).epsilon(1e-12));

    const ImageTensor b = test::random_image(rng, 6, 6, 3);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    mse /= a.data.size();
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-12));
    CHECK(psnr(a, b) == psnr(b, a));

    CHECK_THROWS_AS(psnr(a, ImageTensor(5, 6, 3)), ContractError);
}

TEST_CASE("ssim basics") {
    Rng rng(503);
    const ImageTensor a = test::random_image(rng, 16, 16, 1);
    CHECK(ssim(a, a) == 1.0);

    // Anti-correlated binary pattern: negative structural term.
    ImageTensor bin(16, 16, 1);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) bin.at(x, y, 0) = (x + y) % 2;
    ImageTensor inv = bin;
    for (double& v : inv.data) v = 1.0 - v;
    CHECK(ssim(bin, inv) < 0.0);

    const ImageTensor b = test::random_image(rng, 16, 16, 1);
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-9));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) >= -1.0);
    CHECK(ssim(a, b) <= 1.0);

    CHECK_THROWS_AS(ssim(ImageTensor(8, 8, 1), ImageTensor(8, 8, 1)), ContractError);
}

TEST_CASE("tcm: exact one for identical frames with zero flow") {
    Rng rng(505);
    const ImageTensor frame = test::random_image(rng, 8, 8, 3);
    const double v = tcm({frame, frame}, {FlowField(8, 8)});
    CHECK(v == 1.0);
}

TEST_CASE("tcm orders consistent sequences above noise") {
    Rng rng(507);
    const int H = 16, W = 16;
    // Consistent: a translating pattern with its exact backward lag-1 flows.
    ImageTensor base(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) base.at(x, y, 0) = 0.5 + 0.4 * std::sin(x * 0.7) * std::cos(y * 0.5);
    std::vector<ImageTensor> consistent;
    std::vector<FlowField> flows;
    for (int t = 0; t < 5; ++t) {
        FlowField to_prev(H, W);
        if (t > 0) {
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) to_prev.set(x, y, 1.0, 0.0);
        }
        if (t == 0) {
            consistent.push_back(base);
        } else {
            consistent.push_back(warp_backward(consistent.back(), to_prev));
            flows.push_back(to_prev);
        }
    }
    const double tcm_consistent = tcm(consistent, flows);

    std::vector<ImageTensor> noise;
    for (int t = 0; t < 5; ++t) noise.push_back(test::random_image(rng, H, W, 1));
    const double tcm_noise = tcm(noise, flows);

    CHECK(tcm_consistent > 0.99);
    CHECK(tcm_noise < tcm_consistent);
}

TEST_CASE("tcm does not decrease when appending a zero-error pair") {
    Rng rng(509);
    std::vector<ImageTensor> frames;
    for (int t = 0; t < 4; ++t) frames.push_back(test::random_image(rng, 8, 8, 1));
    std::vector<FlowField> flows(3, FlowField(8, 8));
    const double before = tcm(frames, flows);

    frames.push_back(frames.back());  // identical frame, zero flow: zero pair error
    flows.push_back(FlowField(8, 8));
    const double after = tcm(frames, flows);
    CHECK(after >= before);

    // And it is invariant when the sequence already has zero error.
    std::vector<ImageTensor> still(3, frames[0]);
    std::vector<FlowField> zz(2, FlowField(8, 8));
    const double base = tcm(still, zz);
    still.push_back(frames[0]);
    zz.push_back(FlowField(8, 8));
    CHECK(tcm(still, zz) == base);
}

TEST_CASE("tcm contract errors") {
    CHECK_THROWS_AS(tcm({ImageTensor(8, 8, 1)}, {}), ContractError);
    CHECK_THROWS_AS(tcm({ImageTensor(8, 8, 1), ImageTensor(8, 8, 1)}, {}), ContractError);
}
