#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "fwn/gradcheck.hpp"
#include "fwn/metrics.hpp"
#include "fwn/network.hpp"
#include "fwn/synthdata.hpp"
#include "fwn/warp.hpp"
#include "helpers.hpp"

using namespace fwn;

namespace {

struct SceneData {
    Dataset ds;
    ImageTensor fg_c;
    SemanticLayout lo_c;
};

SceneData make_scene(std::uint64_t seed, int frames, MotionKind kind = MotionKind::kAffine) {
    SpriteScene scene;
    scene.seed = seed;
    scene.motion = kind;
    SceneData out{generate(scene, frames), {}, {}};
    out.fg_c = clothing_foreground(out.ds.frames[0].image, out.ds.frames[0].layout);
    out.lo_c = out.ds.frames[0].layout;
    return out;
}

TrainSample sample_for_frame(const SceneData& sc, int t,
                             const std::vector<FlowField>& predicted) {
    TrainSample s;
    s.fg_c = sc.fg_c;
    s.lo_c = sc.lo_c;
    s.motion_layout = sc.ds.frames[t].layout;
    s.target_image = clothing_foreground(sc.ds.frames[t].image, sc.ds.frames[t].layout);
    s.prev_flow = t > 0 && !predicted.empty() ? predicted[t - 1]
                                              : FlowField(sc.ds.height, sc.ds.width);
    for (int lag : {1, 3, 9}) {
        if (t - lag < 0 || static_cast<int>(predicted.size()) < t) continue;
        auto it = sc.ds.frames[t].lag_flows.find(lag);
        if (it == sc.ds.frames[t].lag_flows.end()) continue;
        s.ftc_terms.push_back({lag, predicted[t - lag], it->second});
    }
    return s;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

TEST_CASE("identity initialization: zero flow, input passes through") {
    const SceneData sc = make_scene(41, 2);
    const C2fState state = init_state(C2fConfig{}, 7);
    const C2fOutput out = forward(state, sc.fg_c, sc.lo_c, sc.ds.frames[1].layout,
                                  FlowField(64, 64));

    // Zero-initialized regressor head outputs the lattice.
    const TpsPoints lattice = tps_lattice();
    for (int k = 0; k < kTpsPoints; ++k) {
        CHECK(out.theta[k].x == lattice[k].x);
        CHECK(out.theta[k].y == lattice[k].y);
    }
    const double diag = std::hypot(63.0, 63.0);
    CHECK(max_abs(out.flow_coarse.vectors) < 1e-8 * diag);
    // Zero-initialized fine head leaves the coarse flow untouched.
    CHECK(max_abs(out.flow_fine.vectors) == 0.0);
    CHECK(max_abs(out.flow_final.vectors) < 1e-8 * diag);
    CHECK(out.warped_fine.data == out.warped_coarse.data);
    double diff = 0.0;
    for (std::size_t i = 0; i < out.warped_fine.data.size(); ++i)
        diff = std::max(diff, std::abs(out.warped_fine.data[i] - sc.fg_c.data[i]));
    CHECK(diff < 1e-6);
}

TEST_CASE("shape contract: 64x64 with 3 levels gives a 16x16 correlation domain") {
    const C2fState state = init_state(C2fConfig{}, 1);
    CHECK(state.reg_fc1.in_dim == 256);  // 16*16 similarities per position
    CHECK(state.reg_fc2.out_dim == 18);
    const SceneData sc = make_scene(43, 1);
    const C2fOutput out = forward(state, sc.fg_c, sc.lo_c, sc.ds.frames[0].layout, FlowField(64, 64));
    CHECK(out.flow_final.height == 64);
    CHECK(out.warped_fine.height == 64);
    CHECK(out.warped_fine.channels == 3);
}

TEST_CASE("forward is deterministic and flow_final composes exactly") {
    const SceneData sc = make_scene(47, 3, MotionKind::kTps);
    C2fState state = init_state(C2fConfig{}, 11);
    // Perturb so the fine head contributes too.
    Rng rng(13);
    for_each_param(state, [&](const std::string&, std::vector<double>& v) {
        for (double& x : v) x += 0.02 * rng.normal();
    });
    const FlowField prev = sc.ds.frames[1].flow_to_exemplar;
    const C2fOutput a = forward(state, sc.fg_c, sc.lo_c, sc.ds.frames[2].layout, prev);
    const C2fOutput b = forward(state, sc.fg_c, sc.lo_c, sc.ds.frames[2].layout, prev);
    CHECK(a.flow_final.vectors == b.flow_final.vectors);
    CHECK(a.warped_fine.data == b.warped_fine.data);
    CHECK(max_abs(a.flow_fine.vectors) > 0.0);
    for (std::size_t i = 0; i < a.flow_final.vectors.size(); ++i)
        CHECK(a.flow_final.vectors[i] == a.flow_coarse.vectors[i] + a.flow_fine.vectors[i]);
    // The emitted warps are exactly the backward warps of the inputs.
    CHECK(a.warped_fine.data == warp_backward(sc.fg_c, a.flow_final).data);
    CHECK(a.warped_coarse.data == warp_backward(sc.fg_c, a.flow_coarse).data);

    // Same seed, same state.
    C2fState replay = init_state(C2fConfig{}, 11);
    Rng rng2(13);
    for_each_param(replay, [&](const std::string&, std::vector<double>& v) {
        for (double& x : v) x += 0.02 * rng2.normal();
    });
    const C2fOutput c = forward(replay, sc.fg_c, sc.lo_c, sc.ds.frames[2].layout, prev);
    CHECK(c.flow_final.vectors == a.flow_final.vectors);
}

TEST_CASE("whole-network gradients match finite differences") {
    const GradCheckResult res = gradcheck_network(2024);
    INFO("max relative error ", res.max_rel_err, " over ", res.probes, " probes");
    CHECK(res.probes == 10);
    CHECK(res.pass());
}

TEST_CASE("train_step with zero learning rate leaves the state bit-identical") {
    const SceneData sc = make_scene(53, 2);
    C2fState state = init_state(C2fConfig{}, 17);
    std::vector<std::vector<double>> before;
    for_each_param(state, [&](const std::string&, std::vector<double>& v) { before.push_back(v); });

    AdamOptimizer opt;
    opt.lr = 0.0;
    std::vector<FlowField> none;
    const LossReport rep = train_step(state, sample_for_frame(sc, 1, none), opt);
    CHECK(rep.l_full > 0.0);

    std::size_t i = 0;
    for_each_param(state, [&](const std::string&, std::vector<double>& v) {
        CHECK(v == before[i]);
        ++i;
    });
}

TEST_CASE("loss report from a train step round-trips through JSON") {
    const SceneData sc = make_scene(59, 2);
    C2fState state = init_state(C2fConfig{}, 19);
    AdamOptimizer opt;
    std::vector<FlowField> none;
    const LossReport rep = train_step(state, sample_for_frame(sc, 1, none), opt);
    const LossReport back = LossReport::from_json(rep.to_json());
    CHECK(back.l_full == rep.l_full);
    CHECK(back.l_rec_fine == rep.l_rec_fine);
    CHECK(back.l_ftc == rep.l_ftc);
    CHECK(rep.l_full ==
          doctest::Approx(rep.l_rec_fine + rep.l_rec_coarse + 5.0 * rep.l_ftc + 0.5 * rep.l_tvl1)
              .epsilon(1e-12));
}

TEST_CASE("single-sample overfit drives the fine reconstruction loss down") {
    const SceneData sc = make_scene(61, 4);
    C2fState state = init_state(C2fConfig{}, 23);
    AdamOptimizer opt;
    std::vector<FlowField> none;
    const TrainSample sample = sample_for_frame(sc, 3, none);

    double initial = 0.0, final = 0.0;
    for (int step = 0; step < 300; ++step) {
        const LossReport rep = train_step(state, sample, opt);
        if (step == 0) initial = rep.l_rec_fine;
        final = rep.l_rec_fine;
    }
    INFO("l_rec_fine: ", initial, " -> ", final);
    CHECK(final < 0.25 * initial);
}

TEST_CASE("run_sequence chains predicted flows") {
    const SceneData sc = make_scene(67, 4, MotionKind::kTps);
    C2fState state = init_state(C2fConfig{}, 29);
    Rng rng(31);
    for_each_param(state, [&](const std::string&, std::vector<double>& v) {
        for (double& x : v) x += 0.01 * rng.normal();
    });

    std::vector<SemanticLayout> layouts;
    for (const FrameData& fd : sc.ds.frames) layouts.push_back(fd.layout);

    SUBCASE("single frame equals one forward call") {
        const std::vector<C2fOutput> seq = run_sequence(state, sc.fg_c, sc.lo_c, {layouts[0]});
        REQUIRE(seq.size() == 1);
        const C2fOutput direct = forward(state, sc.fg_c, sc.lo_c, layouts[0], FlowField(64, 64));
        CHECK(seq[0].flow_final.vectors == direct.flow_final.vectors);
    }

    SUBCASE("each frame feeds the next frame's previous-flow input") {
        const std::vector<C2fOutput> seq = run_sequence(state, sc.fg_c, sc.lo_c, layouts);
        REQUIRE(seq.size() == layouts.size());
        const C2fOutput second = forward(state, sc.fg_c, sc.lo_c, layouts[1], seq[0].flow_final);
        CHECK(seq[1].flow_final.vectors == second.flow_final.vectors);
    }

    SUBCASE("constant motion layouts: temporal stability measurement") {
        std::vector<SemanticLayout> constant(4, layouts[1]);
        const std::vector<C2fOutput> seq = run_sequence(state, sc.fg_c, sc.lo_c, constant);
        double eps = 0.0;
        for (std::size_t t = 1; t < seq.size(); ++t) {
            double d = 0.0;
            for (std::size_t i = 0; i < seq[t].flow_final.vectors.size(); ++i)
                d += std::abs(seq[t].flow_final.vectors[i] - seq[t - 1].flow_final.vectors[i]);
            eps = std::max(eps, d / seq[t].flow_final.vectors.size());
        }
        std::printf("[measurement] consecutive flow_final mean-abs delta on constant layouts: %.3e px\n",
                    eps);
        CHECK(std::isfinite(eps));
        CHECK(eps < 1.0);  // untrained stability envelope, not a convergence claim
    }
}

TEST_CASE("model serialization round trip") {
    test::TempDir dir("model");
    C2fState state = init_state(C2fConfig{}, 37);
    Rng rng(41);
    for_each_param(state, [&](const std::string&, std::vector<double>& v) {
        for (double& x : v) x += 0.05 * rng.normal();
    });
    const std::string path = (dir.path() / "model.bin").string();
    save_model(state, path);
    C2fState back = load_model(path);

    std::vector<std::vector<double>> a, b;
    for_each_param(state, [&](const std::string&, std::vector<double>& v) { a.push_back(v); });
    for_each_param(back, [&](const std::string&, std::vector<double>& v) { b.push_back(v); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK(back.config.height == 64);

    SUBCASE("truncated file is a format error") {
        const std::string cut = (dir.path() / "cut.bin").string();
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_model(cut), FormatError);
    }
    SUBCASE("bad magic is a format error") {
        const std::string junk = (dir.path() / "junk.bin").string();
        std::ofstream out(junk, std::ios::binary);
        out << "NOPE notamodel";
        out.close();
        CHECK_THROWS_AS(load_model(junk), FormatError);
    }
}

TEST_CASE("input contract violations") {
    const C2fState state = init_state(C2fConfig{}, 1);
    const SceneData sc = make_scene(71, 1);
    CHECK_THROWS_AS(forward(state, ImageTensor(32, 32, 3), sc.lo_c, sc.ds.frames[0].layout,
                            FlowField(64, 64)),
                    ContractError);
    CHECK_THROWS_AS(forward(state, sc.fg_c, sc.lo_c, sc.ds.frames[0].layout, FlowField(32, 64)),
                    ContractError);
    CHECK_THROWS_AS(run_sequence(state, sc.fg_c, sc.lo_c, {}), ContractError);
}
