#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fwn/gradcheck.hpp"
#include "fwn/losses.hpp"
#include "fwn/warp.hpp"
#include "helpers.hpp"

using namespace fwn;

TEST_CASE("ftc loss zero case is exact") {
    Rng rng(401);
    const int H = 8, W = 8;
    const FlowField f_prev = test::random_flow(rng, H, W, -2, 2);
    const FlowField u = test::random_flow(rng, H, W, -1.5, 1.5);
    const FlowField transported = warp_flow(f_prev, u);
    FlowField f_t(H, W);
    for (std::size_t i = 0; i < f_t.vectors.size(); ++i)
        f_t.vectors[i] = transported.vectors[i] + u.vectors[i];
    CHECK(ftc_loss(f_t, f_prev, u) == 0.0);
}

TEST_CASE("ftc loss of a constant flow against zero history") {
    const int H = 4, W = 4;
    FlowField f_t(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) f_t.set(x, y, -1.5, 2.25);
    CHECK(ftc_loss(f_t, FlowField(H, W), FlowField(H, W)) == doctest::Approx(3.75).epsilon(1e-15));
}

TEST_CASE("ftc loss matches the scalar-loop oracle") {
    Rng rng(403);
    const int H = 8, W = 8;
    const FlowField f_t = test::random_flow(rng, H, W, -2, 2);
    const FlowField f_prev = test::random_flow(rng, H, W, -2, 2);
    const FlowField u = test::random_flow(rng, H, W, -1, 1);
    const FlowField transported = warp_flow(f_prev, u);
    double expected = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            expected += std::abs(f_t.dx(x, y) - transported.dx(x, y) - u.dx(x, y)) +
                        std::abs(f_t.dy(x, y) - transported.dy(x, y) - u.dy(x, y));
    expected /= H * W;
    CHECK(ftc_loss(f_t, f_prev, u) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ftc loss is nonnegative and zero only at zero residual") {
    Rng rng(405);
    const int H = 6, W = 6;
    for (int trial = 0; trial < 10; ++trial) {
        const FlowField f_t = test::random_flow(rng, H, W, -2, 2);
        const FlowField f_prev = test::random_flow(rng, H, W, -2, 2);
        const FlowField u = test::random_flow(rng, H, W, -1, 1);
        CHECK(ftc_loss(f_t, f_prev, u) >= 0.0);
    }
    // Temporal identity: equal flows, zero carrier.
    const FlowField f = test::random_flow(rng, H, W, -2, 2);
    CHECK(ftc_loss(f, f, FlowField(H, W)) == 0.0);
}

TEST_CASE("ftc multiscale sums the available lags") {
    Rng rng(407);
    const int H = 6, W = 6;
    std::vector<FlowField> flows;
    for (int t = 0; t < 10; ++t) flows.push_back(test::random_flow(rng, H, W, -2, 2));
    std::map<int, FlowField> gt_u;
    for (int lag : {1, 3, 9}) gt_u.emplace(lag, test::random_flow(rng, H, W, -1, 1));

    const double total = ftc_multiscale(flows, gt_u);
    const int t = 9;
    const double expected = ftc_loss(flows[t], flows[t - 1], gt_u.at(1)) +
                            ftc_loss(flows[t], flows[t - 3], gt_u.at(3)) +
                            ftc_loss(flows[t], flows[t - 9], gt_u.at(9));
    CHECK(total == doctest::Approx(expected).epsilon(1e-12));

    SUBCASE("only lag-1 history equals a single term") {
        std::vector<FlowField> two = {flows[0], flows[1]};
        CHECK(ftc_multiscale(two, gt_u) ==
              doctest::Approx(ftc_loss(two[1], two[0], gt_u.at(1))).epsilon(1e-12));
    }
    SUBCASE("perfectly consistent constant sequence is zero at all lags") {
        std::vector<FlowField> constant(10, flows[0]);
        std::map<int, FlowField> zero_u;
        for (int lag : {1, 3, 9}) zero_u.emplace(lag, FlowField(H, W));
        CHECK(ftc_multiscale(constant, zero_u) == 0.0);
    }
    SUBCASE("no usable lag is a contract error") {
        std::vector<FlowField> single = {flows[0]};
        CHECK_THROWS_AS(ftc_multiscale(single, gt_u), ContractError);
        CHECK_THROWS_AS(ftc_multiscale(flows, std::map<int, FlowField>{}), ContractError);
    }
}

TEST_CASE("tvl1: constant flow, hand-counted ramp, homogeneity, shift invariance") {
    const int H = 4, W = 4;
    FlowField constant(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) constant.set(x, y, 3.0, -2.0);
    CHECK(tvl1_loss(constant) == 0.0);

    FlowField ramp(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) ramp.set(x, y, static_cast<double>(x), 0.0);
    // 12 horizontal pairs each |d dx| = 1; vertical differences vanish.
    CHECK(tvl1_loss(ramp) == doctest::Approx(12.0 / 16.0).epsilon(1e-15));

    Rng rng(409);
    FlowField f = test::random_flow(rng, H, W, -2, 2);
    const double base = tvl1_loss(f);
    FlowField scaled = f;
    for (double& v : scaled.vectors) v *= 2.5;
    CHECK(tvl1_loss(scaled) == doctest::Approx(2.5 * base).epsilon(1e-12));

    FlowField shifted = f;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            shifted.dx(x, y) += 17.0;
            shifted.dy(x, y) -= 4.0;
        }
    CHECK(tvl1_loss(shifted) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("rec loss: zero, symmetry, constant-offset closed form") {
    Rng rng(411);
    const int H = 16, W = 16, C = 3;
    const ImageTensor a = test::random_image(rng, H, W, C);
    CHECK(rec_loss(a, a) == 0.0);

    const ImageTensor b = test::random_image(rng, H, W, C);
    CHECK(rec_loss(a, b) == doctest::Approx(rec_loss(b, a)).epsilon(1e-12));

    // Constant offset c on all pixels: each pyramid level contributes c * C.
    const double c = 0.125;
    ImageTensor shifted = a;
    for (double& v : shifted.data) v += c;
    CHECK(rec_loss(shifted, a) == doctest::Approx(3.0 * c * C).epsilon(1e-10));

    CHECK_THROWS_AS(rec_loss(a, ImageTensor(H, W + 1, C)), ContractError);
}

TEST_CASE("rec loss adjoint matches finite differences") {
    Rng rng(413);
    const int H = 8, W = 8, C = 2;
    ImageTensor pred = test::random_image(rng, H, W, C);
    const ImageTensor target = test::random_image(rng, H, W, C);
    ImageTensor d_pred;
    rec_loss(pred, target, &d_pred);
    const double h = 1e-5;
    int checked = 0;
    for (int probe = 0; probe < 40 && checked < 20; ++probe) {
        const std::size_t i = rng.next_u64() % pred.data.size();
        const double saved = pred.data[i];
        pred.data[i] = saved + h;
        const double hi = rec_loss(pred, target);
        pred.data[i] = saved - h;
        const double lo = rec_loss(pred, target);
        pred.data[i] = saved;
        const double fd = (hi - lo) / (2 * h);
        if (std::abs(fd) < 1e-7) continue;  // L1 kink in the probe interval
        ++checked;
        const double denom = std::max(std::abs(fd), std::abs(d_pred.data[i]));
        CHECK(std::abs(fd - d_pred.data[i]) / denom < 1e-4);
    }
    CHECK(checked >= 10);
}

TEST_CASE("ftc and tvl1 adjoints pass the shared finite-difference suite") {
    CHECK(gradcheck_ftc(7).pass());
    CHECK(gradcheck_tvl1(7).pass());
}

TEST_CASE("full objective weights and report invariant") {
    const LossReport zero = full_objective(0, 0, 0, 0);
    CHECK(zero.l_full == 0.0);

    const LossReport ones = full_objective(1, 1, 1, 1);
    CHECK(ones.l_full == doctest::Approx(7.5).epsilon(1e-15));
    CHECK(ones.lambda1 == 5.0);
    CHECK(ones.lambda2 == 0.5);

    Rng rng(417);
    for (int trial = 0; trial < 20; ++trial) {
        const double rf = rng.uniform(), rc = rng.uniform(), ftc = rng.uniform(), tv = rng.uniform();
        const LossReport r = full_objective(rf, rc, ftc, tv, 5.0, 0.5);
        CHECK(r.l_full ==
              doctest::Approx(r.l_rec_fine + r.l_rec_coarse + 5.0 * r.l_ftc + 0.5 * r.l_tvl1)
                  .epsilon(1e-12));
        CHECK(r.l_rec_fine >= 0.0);
    }

    CHECK_THROWS_AS(full_objective(std::nan(""), 0, 0, 0), NumericalError);
}

TEST_CASE("loss report JSON round trip") {
    LossReport r = full_objective(0.123456789012345, 0.5, 0.25, 1.0 / 3.0, 5.0, 0.5);
    const LossReport back = LossReport::from_json(r.to_json());
    CHECK(back.l_rec_fine == r.l_rec_fine);
    CHECK(back.l_rec_coarse == r.l_rec_coarse);
    CHECK(back.l_ftc == r.l_ftc);
    CHECK(back.l_tvl1 == r.l_tvl1);
    CHECK(back.l_full == r.l_full);
    CHECK(back.lambda1 == r.lambda1);
    CHECK(back.lambda2 == r.lambda2);
}
