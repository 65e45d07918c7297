#include "fwn/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <vector>

#include "fwn/lcdconv.hpp"
#include "fwn/losses.hpp"
#include "fwn/network.hpp"
#include "fwn/rng.hpp"
#include "fwn/synthdata.hpp"
#include "fwn/tps.hpp"
#include "fwn/warp.hpp"

namespace fwn {

namespace {

double rel_err(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    // Below this scale both values sit in finite-difference rounding noise.
    if (denom < 1e-7) return 0.0;
    return std::abs(analytic - numeric) / denom;
}

// Central difference of a scalar function along one coordinate.
double central_diff(const std::function<double()>& eval, double& coord, double h) {
    const double saved = coord;
    coord = saved + h;
    const double hi = eval();
    coord = saved - h;
    const double lo = eval();
    coord = saved;
    return (hi - lo) / (2.0 * h);
}

ImageTensor random_image(Rng& rng, int h, int w, int c) {
    ImageTensor img(h, w, c);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

// Flow with fractional parts kept in [0.2, 0.8] so probes stay away from
// bilinear integer crossings.
FlowField random_safe_flow(Rng& rng, int h, int w, double mag) {
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double ix = rng.uniform_int(-static_cast<int>(mag), static_cast<int>(mag));
            const double iy = rng.uniform_int(-static_cast<int>(mag), static_cast<int>(mag));
            f.set(x, y, ix + rng.uniform(0.2, 0.8), iy + rng.uniform(0.2, 0.8));
        }
    return f;
}

}  // namespace

GradCheckResult gradcheck_warp(std::uint64_t seed) {
    Rng rng = Rng(seed).split("gradcheck_warp");
    const int H = 8, W = 8, C = 2;
    ImageTensor source = random_image(rng, H, W, C);
    FlowField flow = random_safe_flow(rng, H, W, 2.0);
    ImageTensor upstream = random_image(rng, H, W, C);
    for (double& v : upstream.data) v = 2.0 * v - 1.0;

    const WarpGradients g = warp_backward_grad(source, flow, upstream);
    auto loss = [&]() {
        const ImageTensor out = warp_backward(source, flow);
        double s = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * upstream.data[i];
        return s;
    };

    GradCheckResult res{"warp", 0.0, 1e-4, 0};
    const double h = 1e-4;
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % flow.vectors.size();
        const double fd = central_diff(loss, flow.vectors[i], h);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(g.d_flow.vectors[i], fd));
        ++res.probes;
    }
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % source.data.size();
        const double fd = central_diff(loss, source.data[i], h);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(g.d_image.data[i], fd));
        ++res.probes;
    }
    return res;
}

GradCheckResult gradcheck_lcdconv(std::uint64_t seed) {
    Rng rng = Rng(seed).split("gradcheck_lcdconv");
    const int H = 6, W = 6, Cin = 3, Cout = 2;
    ImageTensor x = random_image(rng, H, W, Cin);
    ConvSpec spec(Cin, Cout);
    for (double& v : spec.weights) v = rng.normal() * 0.5;
    for (double& v : spec.bias) v = rng.normal() * 0.1;

    // Left/right split layout; offsets keep both the bilinear cell and the
    // rounded layout lookup stable under the probe step.
    SemanticLayout layout(H, W, 3);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px) layout.at(px, y) = px < W / 2 ? 1 : 2;
    OffsetField offsets(H, W);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int k = 0; k < 9; ++k) {
                offsets.dx(px, y, k) = rng.uniform_int(-1, 1) + rng.uniform(0.2, 0.3);
                offsets.dy(px, y, k) = rng.uniform_int(-1, 1) + rng.uniform(0.2, 0.3);
            }

    ImageTensor upstream = random_image(rng, H, W, Cout);
    for (double& v : upstream.data) v = 2.0 * v - 1.0;

    const LcDconvGradients g = lc_dconv_grad(x, spec, offsets, layout, upstream);
    auto loss = [&]() {
        const ImageTensor out = lc_dconv_forward(x, spec, offsets, layout);
        double s = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * upstream.data[i];
        return s;
    };

    GradCheckResult res{"lcdconv", 0.0, 1e-4, 0};
    const double h = 1e-4;
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % spec.weights.size();
        res.max_rel_err =
            std::max(res.max_rel_err, rel_err(g.d_weights[i], central_diff(loss, spec.weights[i], h)));
        ++res.probes;
    }
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % x.data.size();
        res.max_rel_err =
            std::max(res.max_rel_err, rel_err(g.d_x.data[i], central_diff(loss, x.data[i], h)));
        ++res.probes;
    }
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % offsets.data.size();
        res.max_rel_err =
            std::max(res.max_rel_err, rel_err(g.d_offsets.data[i], central_diff(loss, offsets.data[i], h)));
        ++res.probes;
    }
    return res;
}

GradCheckResult gradcheck_ftc(std::uint64_t seed) {
    Rng rng = Rng(seed).split("gradcheck_ftc");
    const int H = 8, W = 8;
    FlowField f_t = random_safe_flow(rng, H, W, 1.0);
    FlowField f_prev = random_safe_flow(rng, H, W, 1.0);
    FlowField u = random_safe_flow(rng, H, W, 1.0);

    FlowField d_ft, d_fprev;
    ftc_loss(f_t, f_prev, u, &d_ft, &d_fprev);
    auto loss = [&]() { return ftc_loss(f_t, f_prev, u); };

    GradCheckResult res{"ftc", 0.0, 1e-4, 0};
    const double h = 1e-5;
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % f_t.vectors.size();
        res.max_rel_err =
            std::max(res.max_rel_err, rel_err(d_ft.vectors[i], central_diff(loss, f_t.vectors[i], h)));
        ++res.probes;
    }
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t i = rng.next_u64() % f_prev.vectors.size();
        res.max_rel_err = std::max(res.max_rel_err,
                                   rel_err(d_fprev.vectors[i], central_diff(loss, f_prev.vectors[i], h)));
        ++res.probes;
    }
    return res;
}

GradCheckResult gradcheck_tvl1(std::uint64_t seed) {
    Rng rng = Rng(seed).split("gradcheck_tvl1");
    const int H = 6, W = 6;
    FlowField f = random_safe_flow(rng, H, W, 1.0);
    FlowField d_f;
    tvl1_loss(f, &d_f);
    auto loss = [&]() { return tvl1_loss(f); };

    GradCheckResult res{"tvl1", 0.0, 1e-4, 0};
    const double h = 1e-6;
    for (int probe = 0; probe < 30; ++probe) {
        const std::size_t i = rng.next_u64() % f.vectors.size();
        res.max_rel_err =
            std::max(res.max_rel_err, rel_err(d_f.vectors[i], central_diff(loss, f.vectors[i], h)));
        ++res.probes;
    }
    return res;
}

GradCheckResult gradcheck_tps(std::uint64_t seed) {
    Rng rng = Rng(seed).split("gradcheck_tps");
    const int H = 12, W = 12;
    const TpsPoints lattice = tps_lattice();
    TpsPoints theta = lattice;
    for (Vec2& p : theta) {
        p.x += rng.uniform(-0.2, 0.2);
        p.y += rng.uniform(-0.2, 0.2);
    }
    FlowField upstream(H, W);
    for (double& v : upstream.vectors) v = rng.uniform(-1.0, 1.0);

    const TpsTransform t = fit_tps(lattice, theta);
    const TpsPoints analytic = tps_flow_grad(t, upstream);

    auto loss = [&]() {
        const TpsTransform tt = fit_tps(lattice, theta);
        const FlowField flow = tps_to_flow(tt, H, W);
        double s = 0.0;
        for (std::size_t i = 0; i < flow.vectors.size(); ++i) s += flow.vectors[i] * upstream.vectors[i];
        return s;
    };

    GradCheckResult res{"tps", 0.0, 1e-4, 0};
    const double h = 1e-5;
    for (int k = 0; k < kTpsPoints; ++k) {
        res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[k].x, central_diff(loss, theta[k].x, h)));
        res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[k].y, central_diff(loss, theta[k].y, h)));
        res.probes += 2;
    }
    return res;
}

GradCheckResult gradcheck_network(std::uint64_t seed) {
    Rng rng = Rng(seed).split("gradcheck_network");

    SpriteScene scene;
    scene.seed = seed + 17;
    Dataset ds = generate(scene, 4);

    C2fConfig cfg;
    C2fState state = init_state(cfg, seed + 3);
    // Perturb every tensor (including the zero-initialized heads) so probes sit
    // away from the kinks of the piecewise-smooth graph.
    for_each_param(state, [&](const std::string& name, std::vector<double>& v) {
        Rng r = rng.split(name);
        for (double& x : v) x += 0.02 * r.normal();
    });

    TrainSample sample;
    sample.fg_c = clothing_foreground(ds.frames[0].image, ds.frames[0].layout);
    sample.lo_c = ds.frames[0].layout;
    sample.motion_layout = ds.frames[2].layout;
    sample.target_image = clothing_foreground(ds.frames[2].image, ds.frames[2].layout);
    sample.prev_flow = ds.frames[1].flow_to_exemplar;
    sample.ftc_terms.push_back({1, ds.frames[1].flow_to_exemplar, ds.frames[2].lag_flows.at(1)});

    const double lambda1 = 5.0, lambda2 = 0.5;
    C2fState grads = state;
    for_each_param(grads,
                   [](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    loss_and_grad(state, sample, lambda1, lambda2, &grads);

    std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> tensors;
    {
        std::vector<std::vector<double>*> sp;
        for_each_param(state, [&](const std::string&, std::vector<double>& v) { sp.push_back(&v); });
        std::vector<const std::vector<double>*> gp;
        for_each_param(std::as_const(grads),
                       [&](const std::string&, const std::vector<double>& v) { gp.push_back(&v); });
        for (std::size_t i = 0; i < sp.size(); ++i) tensors.emplace_back(sp[i], gp[i]);
    }

    auto loss = [&]() { return loss_and_grad(state, sample, lambda1, lambda2, nullptr); };

    GradCheckResult res{"network", 0.0, 1e-3, 0};
    int picked = 0;
    int guard = 0;
    while (picked < 10 && guard < 200) {
        ++guard;
        const std::size_t ti = rng.next_u64() % tensors.size();
        auto& [pv, gv] = tensors[ti];
        if (pv->empty()) continue;
        const std::size_t j = rng.next_u64() % pv->size();
        const double analytic = (*gv)[j];
        // Skip degenerate coordinates: below this scale the finite-difference
        // quotient has no usable relative resolution.
        if (std::abs(analytic) < 1e-4) continue;
        const double fd = central_diff(loss, (*pv)[j], 1e-6);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, fd));
        ++res.probes;
        ++picked;
    }
    return res;
}

GradCheckResult gradcheck(const std::string& op, std::uint64_t seed) {
    if (op == "warp") return gradcheck_warp(seed);
    if (op == "lcdconv") return gradcheck_lcdconv(seed);
    if (op == "ftc") return gradcheck_ftc(seed);
    if (op == "tvl1") return gradcheck_tvl1(seed);
    if (op == "tps") return gradcheck_tps(seed);
    if (op == "network") return gradcheck_network(seed);
    throw ContractError("gradcheck: unknown op " + op);
}

}  // namespace fwn
