#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fwn/gradcheck.hpp"
#include "fwn/lcdconv.hpp"
#include "helpers.hpp"

using namespace fwn;

namespace {

constexpr int kTapX[9] = {-1, 0, 1, -1, 0, 1, -1, 0, 1};
constexpr int kTapY[9] = {-1, -1, -1, 0, 0, 0, 1, 1, 1};

// Plain dense 3x3 zero-padded convolution.
ImageTensor dense_conv(const ImageTensor& x, const ConvSpec& spec) {
    ImageTensor out(x.height, x.width, spec.out_channels);
    for (int y = 0; y < x.height; ++y)
        for (int px = 0; px < x.width; ++px)
            for (int o = 0; o < spec.out_channels; ++o) {
                double acc = spec.bias[o];
                for (int k = 0; k < 9; ++k) {
                    const int xx = px + kTapX[k], yy = y + kTapY[k];
                    if (xx < 0 || xx >= x.width || yy < 0 || yy >= x.height) continue;
                    for (int c = 0; c < spec.in_channels; ++c)
                        acc += spec.weights[spec.windex(o, c, k)] * x.at(xx, yy, c);
                }
                out.at(px, y, o) = acc;
            }
    return out;
}

double bilinear_zero_pad(const ImageTensor& x, double sx, double sy, int c) {
    const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    double v = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const int xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || xx >= x.width || yy < 0 || yy >= x.height) continue;
            v += (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * x.at(xx, yy, c);
        }
    return v;
}

// Test-side deformable convolution without the layout gate.
ImageTensor dconv_oracle(const ImageTensor& x, const ConvSpec& spec, const OffsetField& off) {
    ImageTensor out(x.height, x.width, spec.out_channels);
    for (int y = 0; y < x.height; ++y)
        for (int px = 0; px < x.width; ++px)
            for (int o = 0; o < spec.out_channels; ++o) {
                double acc = spec.bias[o];
                for (int k = 0; k < 9; ++k)
                    for (int c = 0; c < spec.in_channels; ++c)
                        acc += spec.weights[spec.windex(o, c, k)] *
                               bilinear_zero_pad(x, px + kTapX[k] + off.dx(px, y, k),
                                                 y + kTapY[k] + off.dy(px, y, k), c);
                out.at(px, y, o) = acc;
            }
    return out;
}

ConvSpec random_spec(Rng& rng, int in_c, int out_c) {
    ConvSpec spec(in_c, out_c);
    for (double& v : spec.weights) v = rng.normal() * 0.5;
    for (double& v : spec.bias) v = rng.normal() * 0.2;
    return spec;
}

SemanticLayout uniform_layout(int h, int w, std::uint8_t cls = 1) {
    SemanticLayout lo(h, w, 3);
    for (auto& v : lo.classes) v = cls;
    return lo;
}

// Offsets whose bilinear cell and rounded lookup stay stable under FD probes.
OffsetField safe_offsets(Rng& rng, int h, int w, int span = 1) {
    OffsetField off(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < 9; ++k) {
                off.dx(x, y, k) = rng.uniform_int(-span, span) + rng.uniform(0.2, 0.3);
                off.dy(x, y, k) = rng.uniform_int(-span, span) + rng.uniform(0.2, 0.3);
            }
    return off;
}

}  // namespace

TEST_CASE("zero offsets + uniform layout reduce to a standard convolution") {
    Rng rng(301);
    const int H = 6, W = 7, Cin = 3, Cout = 2;
    const ImageTensor x = test::random_image(rng, H, W, Cin);
    const ConvSpec spec = random_spec(rng, Cin, Cout);
    const ImageTensor got = lc_dconv_forward(x, spec, OffsetField(H, W), uniform_layout(H, W));
    const ImageTensor expected = dense_conv(x, spec);
    CHECK(test::max_abs_diff(got.data, expected.data) < 1e-12);
}

TEST_CASE("uniform layout with random offsets reduces to deformable convolution") {
    Rng rng(303);
    const int H = 6, W = 6, Cin = 2, Cout = 3;
    const ImageTensor x = test::random_image(rng, H, W, Cin);
    const ConvSpec spec = random_spec(rng, Cin, Cout);
    OffsetField off(H, W);
    // Small offsets: every rounded lookup stays inside the uniform region or
    // off-image. Off-image taps are gated, so mirror that in the oracle by
    // checking against gated positions only.
    for (double& v : off.data) v = rng.uniform(-0.45, 0.45);
    const ImageTensor got = lc_dconv_forward(x, spec, off, uniform_layout(H, W));

    // With |offset| < 0.5 the rounded position equals the integer tap, so the
    // gate fires exactly on taps whose regular position is inside the image.
    ImageTensor expected(H, W, Cout);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int o = 0; o < Cout; ++o) {
                double acc = spec.bias[o];
                for (int k = 0; k < 9; ++k) {
                    const double sx = px + kTapX[k] + off.dx(px, y, k);
                    const double sy = y + kTapY[k] + off.dy(px, y, k);
                    const int rx = static_cast<int>(std::floor(sx + 0.5));
                    const int ry = static_cast<int>(std::floor(sy + 0.5));
                    if (rx < 0 || rx >= W || ry < 0 || ry >= H) continue;
                    for (int c = 0; c < Cin; ++c)
                        acc += spec.weights[spec.windex(o, c, k)] * bilinear_zero_pad(x, sx, sy, c);
                }
                expected.at(px, y, o) = acc;
            }
    CHECK(test::max_abs_diff(got.data, expected.data) < 1e-12);

    // Interior pixels never round off-image, so there the ungated deformable
    // convolution oracle must agree as well.
    const ImageTensor plain = dconv_oracle(x, spec, off);
    for (int y = 2; y < H - 2; ++y)
        for (int px = 2; px < W - 2; ++px)
            for (int o = 0; o < Cout; ++o)
                CHECK(got.at(px, y, o) == doctest::Approx(plain.at(px, y, o)).epsilon(1e-12));
}

TEST_CASE("left/right split layout keeps taps inside the output pixel's class") {
    // 3x3 input, two vertical class stripes, all-ones weights, zero offsets.
    const int H = 3, W = 3;
    ImageTensor x(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px) x.at(px, y, 0) = 1.0 + y * W + px;
    SemanticLayout lo(H, W, 3);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px) lo.at(px, y) = px < 2 ? 1 : 2;
    ConvSpec spec(1, 1);
    for (double& v : spec.weights) v = 1.0;

    const ImageTensor out = lc_dconv_forward(x, spec, OffsetField(H, W), lo);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px) {
            double expected = 0.0;
            for (int k = 0; k < 9; ++k) {
                const int xx = px + kTapX[k], yy = y + kTapY[k];
                if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
                if (lo.at(xx, yy) != lo.at(px, y)) continue;
                expected += x.at(xx, yy, 0);
            }
            CHECK(out.at(px, y, 0) == doctest::Approx(expected).epsilon(1e-15));
        }
}

TEST_CASE("zero weights leave only the bias") {
    Rng rng(307);
    const int H = 5, W = 5;
    const ImageTensor x = test::random_image(rng, H, W, 2);
    ConvSpec spec(2, 3);
    spec.bias = {0.25, -1.5, 3.0};
    OffsetField off = safe_offsets(rng, H, W);
    SemanticLayout lo(H, W, 3);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px) lo.at(px, y) = static_cast<std::uint8_t>((px + y) % 3);
    const ImageTensor out = lc_dconv_forward(x, spec, off, lo);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int o = 0; o < 3; ++o) CHECK(out.at(px, y, o) == spec.bias[o]);
}

TEST_CASE("gate matches the nearest-neighbor class comparison exhaustively") {
    Rng rng(311);
    const int H = 5, W = 5;
    SemanticLayout lo(H, W, 3);
    for (auto& v : lo.classes) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    OffsetField off(H, W);
    for (double& v : off.data) v = rng.uniform(-1.6, 1.6);

    // One output channel per tap; unit weight on channel k, input all ones.
    ImageTensor x(H, W, 1, 1.0);
    ConvSpec spec(1, 9);
    for (int k = 0; k < 9; ++k) spec.weights[spec.windex(k, 0, k)] = 1.0;

    const ImageTensor out = lc_dconv_forward(x, spec, off, lo);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int k = 0; k < 9; ++k) {
                const double sx = px + kTapX[k] + off.dx(px, y, k);
                const double sy = y + kTapY[k] + off.dy(px, y, k);
                const int rx = static_cast<int>(std::floor(sx + 0.5));
                const int ry = static_cast<int>(std::floor(sy + 0.5));
                const bool gate = rx >= 0 && rx < W && ry >= 0 && ry < H && lo.at(rx, ry) == lo.at(px, y);
                const double expected = gate ? bilinear_zero_pad(x, sx, sy, 0) : 0.0;
                CHECK(out.at(px, y, k) == doctest::Approx(expected).epsilon(1e-14));
            }
}

TEST_CASE("forward is linear in the input and the weights") {
    Rng rng(313);
    const int H = 5, W = 5, Cin = 2, Cout = 2;
    const ImageTensor x1 = test::random_image(rng, H, W, Cin);
    const ImageTensor x2 = test::random_image(rng, H, W, Cin);
    ConvSpec spec = random_spec(rng, Cin, Cout);
    spec.bias.assign(Cout, 0.0);
    const OffsetField off = safe_offsets(rng, H, W);
    SemanticLayout lo(H, W, 3);
    for (auto& v : lo.classes) v = static_cast<std::uint8_t>(rng.uniform_int(1, 2));

    const double a = 1.7, b = -0.4;
    ImageTensor mix(H, W, Cin);
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x1.data[i] + b * x2.data[i];
    const ImageTensor lhs = lc_dconv_forward(mix, spec, off, lo);
    const ImageTensor r1 = lc_dconv_forward(x1, spec, off, lo);
    const ImageTensor r2 = lc_dconv_forward(x2, spec, off, lo);
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
        CHECK(lhs.data[i] == doctest::Approx(a * r1.data[i] + b * r2.data[i]).epsilon(1e-12));

    ConvSpec scaled = spec;
    for (double& v : scaled.weights) v *= 2.5;
    const ImageTensor ws = lc_dconv_forward(x1, scaled, off, lo);
    for (std::size_t i = 0; i < ws.data.size(); ++i)
        CHECK(ws.data[i] == doctest::Approx(2.5 * r1.data[i]).epsilon(1e-12));
}

TEST_CASE("gradients: finite differences and masked-tap zeroing") {
    const GradCheckResult res = gradcheck_lcdconv(3);
    CHECK(res.pass());
    CHECK(res.max_rel_err < 1e-4);

    // Masked taps contribute exactly zero to every adjoint.
    Rng rng(317);
    const int H = 4, W = 4, Cin = 2, Cout = 2;
    const ImageTensor x = test::random_image(rng, H, W, Cin);
    const ConvSpec spec = random_spec(rng, Cin, Cout);
    SemanticLayout lo(H, W, 3);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px) lo.at(px, y) = px < W / 2 ? 1 : 2;
    const OffsetField off = safe_offsets(rng, H, W, 0);
    ImageTensor up = test::random_image(rng, H, W, Cout);

    const LcDconvGradients g = lc_dconv_grad(x, spec, off, lo, up);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int k = 0; k < 9; ++k) {
                const double sx = px + kTapX[k] + off.dx(px, y, k);
                const double sy = y + kTapY[k] + off.dy(px, y, k);
                const int rx = static_cast<int>(std::floor(sx + 0.5));
                const int ry = static_cast<int>(std::floor(sy + 0.5));
                const bool gate = rx >= 0 && rx < W && ry >= 0 && ry < H && lo.at(rx, ry) == lo.at(px, y);
                if (!gate) {
                    CHECK(g.d_offsets.dx(px, y, k) == 0.0);
                    CHECK(g.d_offsets.dy(px, y, k) == 0.0);
                }
            }
}

TEST_CASE("uniform layout + zero offsets: weight gradient equals dense conv backprop") {
    Rng rng(331);
    const int H = 5, W = 6, Cin = 2, Cout = 2;
    const ImageTensor x = test::random_image(rng, H, W, Cin);
    const ConvSpec spec = random_spec(rng, Cin, Cout);
    const ImageTensor up = test::random_image(rng, H, W, Cout);

    const LcDconvGradients g =
        lc_dconv_grad(x, spec, OffsetField(H, W), uniform_layout(H, W), up);

    // Dense conv weight gradient: dW[o,c,k] = sum_p up[o](p) * x_c(p + p_k).
    for (int o = 0; o < Cout; ++o)
        for (int c = 0; c < Cin; ++c)
            for (int k = 0; k < 9; ++k) {
                double expected = 0.0;
                for (int y = 0; y < H; ++y)
                    for (int px = 0; px < W; ++px) {
                        const int xx = px + kTapX[k], yy = y + kTapY[k];
                        if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
                        expected += up.at(px, y, o) * x.at(xx, yy, c);
                    }
                CHECK(g.d_weights[spec.windex(o, c, k)] == doctest::Approx(expected).epsilon(1e-12));
            }
    // Bias gradient is the plain upstream sum.
    for (int o = 0; o < Cout; ++o) {
        double expected = 0.0;
        for (int y = 0; y < H; ++y)
            for (int px = 0; px < W; ++px) expected += up.at(px, y, o);
        CHECK(g.d_bias[o] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("shape mismatches are contract errors") {
    CHECK_THROWS_AS(lc_dconv_forward(ImageTensor(4, 4, 2), ConvSpec(3, 2), OffsetField(4, 4),
                                     SemanticLayout(4, 4, 3)),
                    ContractError);
    CHECK_THROWS_AS(lc_dconv_forward(ImageTensor(4, 4, 2), ConvSpec(2, 2), OffsetField(3, 4),
                                     SemanticLayout(4, 4, 3)),
                    ContractError);
    CHECK_THROWS_AS(lc_dconv_grad(ImageTensor(4, 4, 2), ConvSpec(2, 2), OffsetField(4, 4),
                                  SemanticLayout(4, 4, 3), ImageTensor(4, 4, 3)),
                    ContractError);
}
