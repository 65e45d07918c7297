#include "fwn/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>

#include "fwn/lcdconv.hpp"
#include "fwn/rng.hpp"
#include "fwn/warp.hpp"

namespace fwn {

namespace {

// ---- small operators --------------------------------------------------------

ImageTensor one_hot(const SemanticLayout& layout, int num_classes) {
    ImageTensor out(layout.height, layout.width, num_classes);
    for (int y = 0; y < layout.height; ++y)
        for (int x = 0; x < layout.width; ++x) out.at(x, y, layout.at(x, y)) = 1.0;
    return out;
}

ImageTensor conv_forward(const ImageTensor& x, const Conv& p) {
    if (x.channels != p.in_c) throw ContractError("conv: input channel mismatch");
    const int H = x.height, W = x.width, pad = (p.ksize - 1) / 2;
    ImageTensor out(H, W, p.out_c);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int o = 0; o < p.out_c; ++o) {
                double acc = p.b[o];
                for (int ky = 0; ky < p.ksize; ++ky) {
                    const int yy = y + ky - pad;
                    if (yy < 0 || yy >= H) continue;
                    for (int kx = 0; kx < p.ksize; ++kx) {
                        const int xx = px + kx - pad;
                        if (xx < 0 || xx >= W) continue;
                        const std::size_t base =
                            ((static_cast<std::size_t>(o) * p.in_c) * p.ksize + ky) * p.ksize + kx;
                        for (int c = 0; c < p.in_c; ++c)
                            acc += p.w[base + static_cast<std::size_t>(c) * p.ksize * p.ksize] *
                                   x.at(xx, yy, c);
                    }
                }
                out.at(px, y, o) = acc;
            }
    return out;
}

void conv_backward(const ImageTensor& x, const Conv& p, const ImageTensor& up, Conv& gp,
                   ImageTensor* d_x) {
    const int H = x.height, W = x.width, pad = (p.ksize - 1) / 2;
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int o = 0; o < p.out_c; ++o) {
                const double u = up.at(px, y, o);
                if (u == 0.0) continue;
                gp.b[o] += u;
                for (int ky = 0; ky < p.ksize; ++ky) {
                    const int yy = y + ky - pad;
                    if (yy < 0 || yy >= H) continue;
                    for (int kx = 0; kx < p.ksize; ++kx) {
                        const int xx = px + kx - pad;
                        if (xx < 0 || xx >= W) continue;
                        const std::size_t base =
                            ((static_cast<std::size_t>(o) * p.in_c) * p.ksize + ky) * p.ksize + kx;
                        for (int c = 0; c < p.in_c; ++c) {
                            const std::size_t wi = base + static_cast<std::size_t>(c) * p.ksize * p.ksize;
                            gp.w[wi] += u * x.at(xx, yy, c);
                            if (d_x) d_x->at(xx, yy, c) += u * p.w[wi];
                        }
                    }
                }
            }
}

ImageTensor leaky_relu(const ImageTensor& x, double slope) {
    ImageTensor out = x;
    for (double& v : out.data) v = v >= 0.0 ? v : slope * v;
    return out;
}

// Multiplies upstream by the activation derivative (from the pre-activation).
ImageTensor leaky_relu_grad(const ImageTensor& pre, const ImageTensor& up, double slope) {
    ImageTensor out = up;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (pre.data[i] < 0.0) out.data[i] *= slope;
    return out;
}

ImageTensor avgpool2(const ImageTensor& x) {
    const int H = x.height / 2, W = x.width / 2;
    ImageTensor out(H, W, x.channels);
    for (int y = 0; y < H; ++y)
        for (int px = 0; px < W; ++px)
            for (int c = 0; c < x.channels; ++c)
                out.at(px, y, c) = 0.25 * (x.at(2 * px, 2 * y, c) + x.at(2 * px + 1, 2 * y, c) +
                                           x.at(2 * px, 2 * y + 1, c) + x.at(2 * px + 1, 2 * y + 1, c));
    return out;
}

ImageTensor avgpool2_grad(const ImageTensor& up) {
    ImageTensor out(up.height * 2, up.width * 2, up.channels);
    for (int y = 0; y < up.height; ++y)
        for (int px = 0; px < up.width; ++px)
            for (int c = 0; c < up.channels; ++c) {
                const double g = 0.25 * up.at(px, y, c);
                out.at(2 * px, 2 * y, c) = g;
                out.at(2 * px + 1, 2 * y, c) = g;
                out.at(2 * px, 2 * y + 1, c) = g;
                out.at(2 * px + 1, 2 * y + 1, c) = g;
            }
    return out;
}

ImageTensor upsample2(const ImageTensor& x) {
    ImageTensor out(x.height * 2, x.width * 2, x.channels);
    for (int y = 0; y < out.height; ++y)
        for (int px = 0; px < out.width; ++px)
            for (int c = 0; c < x.channels; ++c) out.at(px, y, c) = x.at(px / 2, y / 2, c);
    return out;
}

ImageTensor upsample2_grad(const ImageTensor& up) {
    ImageTensor out(up.height / 2, up.width / 2, up.channels);
    for (int y = 0; y < up.height; ++y)
        for (int px = 0; px < up.width; ++px)
            for (int c = 0; c < up.channels; ++c) out.at(px / 2, y / 2, c) += up.at(px, y, c);
    return out;
}

// Offset predictor output (18 channels, [k*2 + axis]) viewed as an OffsetField.
OffsetField offsets_from_image(const ImageTensor& img) {
    OffsetField f(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int k = 0; k < 9; ++k) {
                f.dx(x, y, k) = img.at(x, y, 2 * k);
                f.dy(x, y, k) = img.at(x, y, 2 * k + 1);
            }
    return f;
}

ImageTensor offsets_to_image(const OffsetField& f) {
    ImageTensor img(f.height, f.width, 18);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (int k = 0; k < 9; ++k) {
                img.at(x, y, 2 * k) = f.dx(x, y, k);
                img.at(x, y, 2 * k + 1) = f.dy(x, y, k);
            }
    return img;
}

ConvSpec as_spec(const Conv& p) {
    if (p.ksize != 3) throw ContractError("as_spec: deformable conv weights must be 3x3");
    return ConvSpec(p.in_c, p.out_c, p.w, p.b);
}

SemanticLayout subsample_layout(const SemanticLayout& lo, int stride) {
    SemanticLayout out(lo.height / stride, lo.width / stride, lo.num_classes);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(x, y) = lo.at(x * stride, y * stride);
    return out;
}

void add_into(ImageTensor& dst, const ImageTensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// ---- traces ------------------------------------------------------------------

struct FpnTrace {
    std::vector<ImageTensor> conv_in;     // per level, post-pool input
    std::vector<ImageTensor> pre_act;     // conv output before activation
    std::vector<ImageTensor> feat;        // bottom-up features
    std::vector<OffsetField> offsets;     // gated pyramids only
    std::vector<SemanticLayout> layouts;  // gated pyramids only
};

struct TdTrace {
    std::vector<ImageTensor> pre;  // lateral + upsample, before activation
    std::vector<ImageTensor> t;    // top-down features
};

struct Trace {
    FpnTrace a, m, f;
    TdTrace td_a, td_m, td_f;
    CorrelationMap corr;
    std::vector<double> gap, z1, h1, z2;
    TpsTransform tps;
    TpsPoints theta;
    FlowField flow_coarse;
    std::vector<FlowField> ds_flows;          // coarse flow per pyramid level
    std::vector<ImageTensor> warped_feats;    // warped bottom-up appearance features
    ImageTensor cat, f1_pre, f1, fine_img;
    FlowField flow_fine, flow_final;
    ImageTensor warped_coarse, warped_fine;
};

void fpn_bottom_up(const FpnParams& p, const ImageTensor& input, const SemanticLayout* layout,
                   double slope, int levels, FpnTrace& tr) {
    const bool gated = !p.offset_pred.empty();
    tr.conv_in.clear();
    tr.pre_act.clear();
    tr.feat.clear();
    tr.offsets.clear();
    tr.layouts.clear();
    for (int l = 0; l < levels; ++l) {
        ImageTensor x = l == 0 ? input : avgpool2(tr.feat.back());
        ImageTensor pre;
        if (gated) {
            tr.layouts.push_back(subsample_layout(*layout, 1 << l));
            ImageTensor off_img = conv_forward(x, p.offset_pred[l]);
            tr.offsets.push_back(offsets_from_image(off_img));
            pre = lc_dconv_forward(x, as_spec(p.bottom_up[l]), tr.offsets.back(), tr.layouts.back());
        } else {
            pre = conv_forward(x, p.bottom_up[l]);
        }
        tr.conv_in.push_back(std::move(x));
        tr.feat.push_back(leaky_relu(pre, slope));
        tr.pre_act.push_back(std::move(pre));
    }
}

// d_feat holds the accumulated adjoint per bottom-up feature; parameter
// gradients land in gp.
void fpn_bottom_up_backward(const FpnParams& p, const FpnTrace& tr, double slope, int levels,
                            std::vector<ImageTensor>& d_feat, FpnParams& gp) {
    const bool gated = !p.offset_pred.empty();
    for (int l = levels - 1; l >= 0; --l) {
        const ImageTensor d_pre = leaky_relu_grad(tr.pre_act[l], d_feat[l], slope);
        ImageTensor d_in(tr.conv_in[l].height, tr.conv_in[l].width, tr.conv_in[l].channels);
        if (gated) {
            LcDconvGradients g =
                lc_dconv_grad(tr.conv_in[l], as_spec(p.bottom_up[l]), tr.offsets[l], tr.layouts[l], d_pre);
            for (std::size_t i = 0; i < g.d_weights.size(); ++i) gp.bottom_up[l].w[i] += g.d_weights[i];
            for (std::size_t i = 0; i < g.d_bias.size(); ++i) gp.bottom_up[l].b[i] += g.d_bias[i];
            d_in = g.d_x;
            conv_backward(tr.conv_in[l], p.offset_pred[l], offsets_to_image(g.d_offsets),
                          gp.offset_pred[l], &d_in);
        } else {
            conv_backward(tr.conv_in[l], p.bottom_up[l], d_pre, gp.bottom_up[l], &d_in);
        }
        if (l > 0) add_into(d_feat[l - 1], avgpool2_grad(d_in));
    }
}

// feats: the bottom-up features feeding the lateral connections (already
// warped for the appearance pyramid).
void fpn_top_down(const FpnParams& p, const std::vector<ImageTensor>& feats, double slope,
                  TdTrace& tr) {
    const int L = static_cast<int>(feats.size());
    tr.pre.assign(L, ImageTensor());
    tr.t.assign(L, ImageTensor());
    for (int l = L - 1; l >= 0; --l) {
        ImageTensor pre = conv_forward(feats[l], p.lateral[l]);
        if (l + 1 < L) add_into(pre, upsample2(tr.t[l + 1]));
        tr.t[l] = leaky_relu(pre, slope);
        tr.pre[l] = std::move(pre);
    }
}

// d_t0 is the adjoint on the largest top-down feature; d_feats receives the
// adjoints on the lateral inputs.
void fpn_top_down_backward(const FpnParams& p, const std::vector<ImageTensor>& feats,
                           const TdTrace& tr, double slope, const ImageTensor& d_t0,
                           std::vector<ImageTensor>& d_feats, FpnParams& gp) {
    const int L = static_cast<int>(feats.size());
    std::vector<ImageTensor> d_t(L);
    d_t[0] = d_t0;
    for (int l = 1; l < L; ++l) d_t[l] = ImageTensor(tr.t[l].height, tr.t[l].width, tr.t[l].channels);
    for (int l = 0; l < L; ++l) {
        const ImageTensor d_pre = leaky_relu_grad(tr.pre[l], d_t[l], slope);
        conv_backward(feats[l], p.lateral[l], d_pre, gp.lateral[l], &d_feats[l]);
        if (l + 1 < L) add_into(d_t[l + 1], upsample2_grad(d_pre));
    }
}

std::vector<double> affine_forward(const Affine& p, const std::vector<double>& x) {
    std::vector<double> out(p.out_dim);
    for (int o = 0; o < p.out_dim; ++o) {
        double acc = p.b[o];
        const std::size_t row = static_cast<std::size_t>(o) * p.in_dim;
        for (int i = 0; i < p.in_dim; ++i) acc += p.w[row + i] * x[i];
        out[o] = acc;
    }
    return out;
}

void affine_backward(const Affine& p, const std::vector<double>& x, const std::vector<double>& up,
                     Affine& gp, std::vector<double>& d_x) {
    d_x.assign(p.in_dim, 0.0);
    for (int o = 0; o < p.out_dim; ++o) {
        const double u = up[o];
        gp.b[o] += u;
        const std::size_t row = static_cast<std::size_t>(o) * p.in_dim;
        for (int i = 0; i < p.in_dim; ++i) {
            gp.w[row + i] += u * x[i];
            d_x[i] += u * p.w[row + i];
        }
    }
}

ImageTensor concat3(const ImageTensor& a, const ImageTensor& b, const ImageTensor& c) {
    ImageTensor out(a.height, a.width, a.channels + b.channels + c.channels);
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            int ch = 0;
            for (int i = 0; i < a.channels; ++i) out.at(x, y, ch++) = a.at(x, y, i);
            for (int i = 0; i < b.channels; ++i) out.at(x, y, ch++) = b.at(x, y, i);
            for (int i = 0; i < c.channels; ++i) out.at(x, y, ch++) = c.at(x, y, i);
        }
    return out;
}

void split3(const ImageTensor& up, ImageTensor& a, ImageTensor& b, ImageTensor& c) {
    for (int y = 0; y < up.height; ++y)
        for (int x = 0; x < up.width; ++x) {
            int ch = 0;
            for (int i = 0; i < a.channels; ++i) a.at(x, y, i) = up.at(x, y, ch++);
            for (int i = 0; i < b.channels; ++i) b.at(x, y, i) = up.at(x, y, ch++);
            for (int i = 0; i < c.channels; ++i) c.at(x, y, i) = up.at(x, y, ch++);
        }
}

void check_inputs(const C2fConfig& cfg, const ImageTensor& fg_c, const SemanticLayout& lo_c,
                  const SemanticLayout& motion_layout, const FlowField& prev_flow) {
    if (fg_c.height != cfg.height || fg_c.width != cfg.width || fg_c.channels != cfg.image_channels)
        throw ContractError("forward: appearance image shape differs from config");
    if (lo_c.height != cfg.height || lo_c.width != cfg.width)
        throw ContractError("forward: appearance layout shape differs from config");
    if (motion_layout.height != cfg.height || motion_layout.width != cfg.width)
        throw ContractError("forward: motion layout shape differs from config");
    if (prev_flow.height != cfg.height || prev_flow.width != cfg.width)
        throw ContractError("forward: previous flow shape differs from config");
    if (lo_c.num_classes > cfg.num_classes || motion_layout.num_classes > cfg.num_classes)
        throw ContractError("forward: layout class count exceeds config");
}

void forward_impl(const C2fState& st, const ImageTensor& fg_c, const SemanticLayout& lo_c,
                  const SemanticLayout& motion_layout, const FlowField& prev_flow, Trace& tr) {
    const C2fConfig& cfg = st.config;
    check_inputs(cfg, fg_c, lo_c, motion_layout, prev_flow);
    const int L = cfg.levels;

    // Bottom-up passes. Appearance input: layout one-hot + clothing image;
    // motion input: layout one-hot; flow input: previous flow over width.
    ImageTensor in_a = one_hot(lo_c, cfg.num_classes);
    {
        ImageTensor merged(cfg.height, cfg.width, cfg.num_classes + cfg.image_channels);
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x) {
                int ch = 0;
                for (int c = 0; c < cfg.num_classes; ++c) merged.at(x, y, ch++) = in_a.at(x, y, c);
                for (int c = 0; c < cfg.image_channels; ++c) merged.at(x, y, ch++) = fg_c.at(x, y, c);
            }
        in_a = std::move(merged);
    }
    ImageTensor in_m = one_hot(motion_layout, cfg.num_classes);
    ImageTensor in_f = flow_as_image(prev_flow);
    for (double& v : in_f.data) v /= cfg.width;

    fpn_bottom_up(st.fpn_a, in_a, &lo_c, cfg.leaky_slope, L, tr.a);
    fpn_bottom_up(st.fpn_m, in_m, &motion_layout, cfg.leaky_slope, L, tr.m);
    fpn_bottom_up(st.fpn_f, in_f, nullptr, cfg.leaky_slope, L, tr.f);

    // Correlation of the smallest bottom-up features -> theta regression.
    tr.corr = correlation(tr.a.feat[L - 1], tr.m.feat[L - 1]);
    const int n_pos = tr.corr.height * tr.corr.width;
    tr.gap.assign(n_pos, 0.0);
    for (int p = 0; p < n_pos; ++p)
        for (int q = 0; q < n_pos; ++q)
            tr.gap[q] += tr.corr.values[static_cast<std::size_t>(p) * n_pos + q];
    for (double& v : tr.gap) v /= n_pos;

    tr.z1 = affine_forward(st.reg_fc1, tr.gap);
    tr.h1 = tr.z1;
    for (double& v : tr.h1) v = std::tanh(v);
    tr.z2 = affine_forward(st.reg_fc2, tr.h1);

    const TpsPoints lattice = tps_lattice();
    tr.theta = lattice;
    for (int k = 0; k < kTpsPoints; ++k) {
        tr.theta[k].x += cfg.theta_scale * tr.z2[2 * k];
        tr.theta[k].y += cfg.theta_scale * tr.z2[2 * k + 1];
    }
    tr.tps = fit_tps(lattice, tr.theta);
    tr.flow_coarse = tps_to_flow(tr.tps, cfg.height, cfg.width);

    // Warp the bottom-up appearance features with the downsampled coarse flow
    // and rebuild the appearance top-down pathway from the warped features.
    tr.ds_flows.clear();
    tr.warped_feats.clear();
    for (int l = 0; l < L; ++l) {
        tr.ds_flows.push_back(downsample_flow(tr.flow_coarse, 1 << l));
        tr.warped_feats.push_back(warp_backward(tr.a.feat[l], tr.ds_flows.back()));
    }
    fpn_top_down(st.fpn_a, tr.warped_feats, cfg.leaky_slope, tr.td_a);
    fpn_top_down(st.fpn_m, tr.m.feat, cfg.leaky_slope, tr.td_m);
    fpn_top_down(st.fpn_f, tr.f.feat, cfg.leaky_slope, tr.td_f);

    // Refinement flow from the concatenated largest top-down features.
    tr.cat = concat3(tr.td_a.t[0], tr.td_m.t[0], tr.td_f.t[0]);
    tr.f1_pre = conv_forward(tr.cat, st.fine1);
    tr.f1 = leaky_relu(tr.f1_pre, cfg.leaky_slope);
    tr.fine_img = conv_forward(tr.f1, st.fine2);
    tr.flow_fine = image_as_flow(tr.fine_img);
    tr.flow_final = compose_flows(tr.flow_coarse, tr.flow_fine);

    tr.warped_coarse = warp_backward(fg_c, tr.flow_coarse);
    tr.warped_fine = warp_backward(fg_c, tr.flow_final);
}

C2fOutput make_output(const Trace& tr) {
    C2fOutput out;
    out.flow_coarse = tr.flow_coarse;
    out.flow_fine = tr.flow_fine;
    out.flow_final = tr.flow_final;
    out.warped_coarse = tr.warped_coarse;
    out.warped_fine = tr.warped_fine;
    out.theta = tr.theta;
    return out;
}

}  // namespace

C2fOutput forward(const C2fState& state, const ImageTensor& fg_c, const SemanticLayout& lo_c,
                  const SemanticLayout& motion_layout, const FlowField& prev_flow) {
    Trace tr;
    forward_impl(state, fg_c, lo_c, motion_layout, prev_flow, tr);
    return make_output(tr);
}

double loss_and_grad(const C2fState& st, const TrainSample& sample, double lambda1, double lambda2,
                     C2fState* grads, LossReport* report, C2fOutput* output) {
    const C2fConfig& cfg = st.config;
    Trace tr;
    forward_impl(st, sample.fg_c, sample.lo_c, sample.motion_layout, sample.prev_flow, tr);
    const int L = cfg.levels;

    if (!sample.target_image.same_shape(sample.fg_c))
        throw ContractError("loss_and_grad: target shape differs from appearance image");

    ImageTensor d_warped_fine, d_warped_coarse;
    const double l_rec_fine =
        rec_loss(tr.warped_fine, sample.target_image, grads ? &d_warped_fine : nullptr);
    const double l_rec_coarse =
        rec_loss(tr.warped_coarse, sample.target_image, grads ? &d_warped_coarse : nullptr);

    double l_ftc = 0.0;
    FlowField d_final_ftc(cfg.height, cfg.width);
    for (const FtcTerm& term : sample.ftc_terms) {
        FlowField d_ft;
        l_ftc += ftc_loss(tr.flow_final, term.f_prev, term.u, grads ? &d_ft : nullptr, nullptr);
        if (grads)
            for (std::size_t i = 0; i < d_final_ftc.vectors.size(); ++i)
                d_final_ftc.vectors[i] += d_ft.vectors[i];
    }

    FlowField d_final_tv;
    const double l_tvl1 = tvl1_loss(tr.flow_final, grads ? &d_final_tv : nullptr);

    const LossReport rep = full_objective(l_rec_fine, l_rec_coarse, l_ftc, l_tvl1, lambda1, lambda2);
    if (report) *report = rep;
    if (output) *output = make_output(tr);

    if (!grads) return rep.l_full;

    // ---- reverse pass -------------------------------------------------------

    // Adjoint on the final flow: fine warp, FTC terms, TVL1.
    WarpGradients g_fine = warp_backward_grad(sample.fg_c, tr.flow_final, d_warped_fine);
    FlowField d_flow_final = g_fine.d_flow;
    for (std::size_t i = 0; i < d_flow_final.vectors.size(); ++i)
        d_flow_final.vectors[i] += lambda1 * d_final_ftc.vectors[i] + lambda2 * d_final_tv.vectors[i];

    // Adjoint on the coarse flow: through the coarse warp plus the final-flow sum.
    WarpGradients g_coarse = warp_backward_grad(sample.fg_c, tr.flow_coarse, d_warped_coarse);
    FlowField d_flow_coarse = g_coarse.d_flow;
    for (std::size_t i = 0; i < d_flow_coarse.vectors.size(); ++i)
        d_flow_coarse.vectors[i] += d_flow_final.vectors[i];

    // Fine head.
    ImageTensor d_f1(cfg.height, cfg.width, cfg.fine_hidden);
    conv_backward(tr.f1, st.fine2, flow_as_image(d_flow_final), grads->fine2, &d_f1);
    const ImageTensor d_f1_pre = leaky_relu_grad(tr.f1_pre, d_f1, cfg.leaky_slope);
    ImageTensor d_cat(cfg.height, cfg.width, tr.cat.channels);
    conv_backward(tr.cat, st.fine1, d_f1_pre, grads->fine1, &d_cat);
    ImageTensor d_ta0(cfg.height, cfg.width, cfg.base_channels);
    ImageTensor d_tm0(cfg.height, cfg.width, cfg.base_channels);
    ImageTensor d_tf0(cfg.height, cfg.width, cfg.base_channels);
    split3(d_cat, d_ta0, d_tm0, d_tf0);

    // Top-down pathways back to the bottom-up features.
    auto zero_like_feats = [](const std::vector<ImageTensor>& feats) {
        std::vector<ImageTensor> out;
        out.reserve(feats.size());
        for (const ImageTensor& f : feats) out.emplace_back(f.height, f.width, f.channels);
        return out;
    };
    std::vector<ImageTensor> d_warped = zero_like_feats(tr.warped_feats);
    std::vector<ImageTensor> d_feat_a = zero_like_feats(tr.a.feat);
    std::vector<ImageTensor> d_feat_m = zero_like_feats(tr.m.feat);
    std::vector<ImageTensor> d_feat_f = zero_like_feats(tr.f.feat);
    fpn_top_down_backward(st.fpn_a, tr.warped_feats, tr.td_a, cfg.leaky_slope, d_ta0, d_warped,
                          grads->fpn_a);
    fpn_top_down_backward(st.fpn_m, tr.m.feat, tr.td_m, cfg.leaky_slope, d_tm0, d_feat_m,
                          grads->fpn_m);
    fpn_top_down_backward(st.fpn_f, tr.f.feat, tr.td_f, cfg.leaky_slope, d_tf0, d_feat_f,
                          grads->fpn_f);

    // Feature warps: adjoints on the unwarped features and the coarse flow.
    for (int l = 0; l < L; ++l) {
        WarpGradients g = warp_backward_grad(tr.a.feat[l], tr.ds_flows[l], d_warped[l]);
        add_into(d_feat_a[l], g.d_image);
        const FlowField d_full = downsample_flow_grad(g.d_flow, 1 << l);
        for (std::size_t i = 0; i < d_flow_coarse.vectors.size(); ++i)
            d_flow_coarse.vectors[i] += d_full.vectors[i];
    }

    // Coarse flow -> theta -> regressor -> correlation.
    const TpsPoints d_theta = tps_flow_grad(tr.tps, d_flow_coarse);
    std::vector<double> d_z2(2 * kTpsPoints);
    for (int k = 0; k < kTpsPoints; ++k) {
        d_z2[2 * k] = cfg.theta_scale * d_theta[k].x;
        d_z2[2 * k + 1] = cfg.theta_scale * d_theta[k].y;
    }
    std::vector<double> d_h1, d_gap;
    affine_backward(st.reg_fc2, tr.h1, d_z2, grads->reg_fc2, d_h1);
    for (std::size_t i = 0; i < d_h1.size(); ++i) d_h1[i] *= 1.0 - tr.h1[i] * tr.h1[i];
    affine_backward(st.reg_fc1, tr.gap, d_h1, grads->reg_fc1, d_gap);

    const int n_pos = tr.corr.height * tr.corr.width;
    CorrelationMap d_corr;
    d_corr.height = tr.corr.height;
    d_corr.width = tr.corr.width;
    d_corr.values.resize(static_cast<std::size_t>(n_pos) * n_pos);
    for (int p = 0; p < n_pos; ++p)
        for (int q = 0; q < n_pos; ++q)
            d_corr.values[static_cast<std::size_t>(p) * n_pos + q] = d_gap[q] / n_pos;
    ImageTensor d_corr_a, d_corr_b;
    correlation_grad(tr.a.feat[L - 1], tr.m.feat[L - 1], d_corr, d_corr_a, d_corr_b);
    add_into(d_feat_a[L - 1], d_corr_a);
    add_into(d_feat_m[L - 1], d_corr_b);

    // Bottom-up pyramids.
    fpn_bottom_up_backward(st.fpn_a, tr.a, cfg.leaky_slope, L, d_feat_a, grads->fpn_a);
    fpn_bottom_up_backward(st.fpn_m, tr.m, cfg.leaky_slope, L, d_feat_m, grads->fpn_m);
    fpn_bottom_up_backward(st.fpn_f, tr.f, cfg.leaky_slope, L, d_feat_f, grads->fpn_f);

    return rep.l_full;
}

// ---- state construction ------------------------------------------------------

namespace {

Conv make_conv(int in_c, int out_c, int ksize, Rng rng, double scale) {
    Conv c;
    c.in_c = in_c;
    c.out_c = out_c;
    c.ksize = ksize;
    c.w.resize(static_cast<std::size_t>(out_c) * in_c * ksize * ksize);
    c.b.assign(out_c, 0.0);
    const double sigma = scale / std::sqrt(static_cast<double>(in_c) * ksize * ksize);
    for (double& v : c.w) v = sigma * rng.normal();
    return c;
}

Conv make_zero_conv(int in_c, int out_c, int ksize) {
    Conv c;
    c.in_c = in_c;
    c.out_c = out_c;
    c.ksize = ksize;
    c.w.assign(static_cast<std::size_t>(out_c) * in_c * ksize * ksize, 0.0);
    c.b.assign(out_c, 0.0);
    return c;
}

Affine make_affine(int in_dim, int out_dim, Rng rng, double scale) {
    Affine a;
    a.in_dim = in_dim;
    a.out_dim = out_dim;
    a.w.resize(static_cast<std::size_t>(out_dim) * in_dim);
    a.b.assign(out_dim, 0.0);
    const double sigma = scale / std::sqrt(static_cast<double>(in_dim));
    for (double& v : a.w) v = sigma * rng.normal();
    return a;
}

FpnParams make_fpn(const C2fConfig& cfg, int input_channels, bool gated, Rng rng) {
    FpnParams p;
    const int C = cfg.base_channels;
    for (int l = 0; l < cfg.levels; ++l) {
        const int in_c = l == 0 ? input_channels : C;
        p.bottom_up.push_back(make_conv(in_c, C, 3, rng.split("bu" + std::to_string(l)), 1.0));
        if (gated) p.offset_pred.push_back(make_zero_conv(in_c, 18, 3));
        p.lateral.push_back(make_conv(C, C, 1, rng.split("lat" + std::to_string(l)), 1.0));
    }
    return p;
}

}  // namespace

C2fState init_state(const C2fConfig& config, std::uint64_t seed) {
    if (config.levels < 2) throw ContractError("init_state: need at least 2 pyramid levels");
    const int down = 1 << (config.levels - 1);
    if (config.height % down != 0 || config.width % down != 0)
        throw ContractError("init_state: dimensions must be divisible by 2^(levels-1)");
    if (config.base_channels < 1) throw ContractError("init_state: base_channels must be >= 1");

    Rng root(seed);
    C2fState st;
    st.config = config;
    st.fpn_a = make_fpn(config, config.num_classes + config.image_channels, true, root.split("fpn_a"));
    st.fpn_m = make_fpn(config, config.num_classes, true, root.split("fpn_m"));
    st.fpn_f = make_fpn(config, 2, false, root.split("fpn_f"));

    const int hs = config.height / down, ws = config.width / down;
    st.reg_fc1 = make_affine(hs * ws, config.regressor_hidden, root.split("reg1"), 1.0);
    st.reg_fc2 = make_affine(config.regressor_hidden, 2 * kTpsPoints, root.split("reg2"), 0.0);

    st.fine1 = make_conv(3 * config.base_channels, config.fine_hidden, 3, root.split("fine1"), 1.0);
    st.fine2 = make_zero_conv(config.fine_hidden, 2, 3);
    return st;
}

namespace {

template <typename State, typename Fn>
void visit_params(State& st, const Fn& fn) {
    auto visit_fpn = [&](auto& fpn, const std::string& prefix) {
        for (std::size_t l = 0; l < fpn.bottom_up.size(); ++l) {
            fn(prefix + ".bu" + std::to_string(l) + ".w", fpn.bottom_up[l].w);
            fn(prefix + ".bu" + std::to_string(l) + ".b", fpn.bottom_up[l].b);
        }
        for (std::size_t l = 0; l < fpn.offset_pred.size(); ++l) {
            fn(prefix + ".off" + std::to_string(l) + ".w", fpn.offset_pred[l].w);
            fn(prefix + ".off" + std::to_string(l) + ".b", fpn.offset_pred[l].b);
        }
        for (std::size_t l = 0; l < fpn.lateral.size(); ++l) {
            fn(prefix + ".lat" + std::to_string(l) + ".w", fpn.lateral[l].w);
            fn(prefix + ".lat" + std::to_string(l) + ".b", fpn.lateral[l].b);
        }
    };
    visit_fpn(st.fpn_a, "fpn_a");
    visit_fpn(st.fpn_m, "fpn_m");
    visit_fpn(st.fpn_f, "fpn_f");
    fn("reg.fc1.w", st.reg_fc1.w);
    fn("reg.fc1.b", st.reg_fc1.b);
    fn("reg.fc2.w", st.reg_fc2.w);
    fn("reg.fc2.b", st.reg_fc2.b);
    fn("fine.c1.w", st.fine1.w);
    fn("fine.c1.b", st.fine1.b);
    fn("fine.c2.w", st.fine2.w);
    fn("fine.c2.b", st.fine2.b);
}

}  // namespace

void for_each_param(C2fState& state,
                    const std::function<void(const std::string&, std::vector<double>&)>& fn) {
    visit_params(state, fn);
}

void for_each_param(const C2fState& state,
                    const std::function<void(const std::string&, const std::vector<double>&)>& fn) {
    visit_params(state, fn);
}

LossReport train_step(C2fState& state, const TrainSample& sample, AdamOptimizer& opt,
                      double lambda1, double lambda2, C2fOutput* output) {
    C2fState grads = state;
    for_each_param(grads, [](const std::string&, std::vector<double>& v) {
        std::fill(v.begin(), v.end(), 0.0);
    });
    LossReport report;
    // output carries the pre-update prediction for flow-history bookkeeping.
    loss_and_grad(state, sample, lambda1, lambda2, &grads, &report, output);
    if (!std::isfinite(report.l_full))
        throw NumericalError("train_step: non-finite loss: " + report.to_json());

    opt.step_count += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));

    std::vector<std::pair<std::string, std::vector<double>*>> params;
    for_each_param(state, [&](const std::string& name, std::vector<double>& v) {
        params.emplace_back(name, &v);
    });
    std::vector<const std::vector<double>*> gvecs;
    for_each_param(std::as_const(grads),
                   [&](const std::string&, const std::vector<double>& v) { gvecs.push_back(&v); });

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, p] = params[i];
        const std::vector<double>& g = *gvecs[i];
        auto& [m, v] = opt.moments[name];
        if (m.size() != p->size()) {
            m.assign(p->size(), 0.0);
            v.assign(p->size(), 0.0);
        }
        for (std::size_t j = 0; j < p->size(); ++j) {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            (*p)[j] -= opt.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt.eps);
        }
    }
    return report;
}

std::vector<C2fOutput> run_sequence(const C2fState& state, const ImageTensor& fg_c,
                                    const SemanticLayout& lo_c,
                                    const std::vector<SemanticLayout>& motion_layouts) {
    if (motion_layouts.empty()) throw ContractError("run_sequence: need at least one frame");
    std::vector<C2fOutput> outputs;
    outputs.reserve(motion_layouts.size());
    FlowField prev(state.config.height, state.config.width);
    for (const SemanticLayout& motion : motion_layouts) {
        outputs.push_back(forward(state, fg_c, lo_c, motion, prev));
        prev = outputs.back().flow_final;
    }
    return outputs;
}

// ---- serialization ------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'C', '2', 'F', 'W'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("model: truncated file");
    return v;
}

}  // namespace

void save_model(const C2fState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_model: cannot open " + path);
    out.write(kModelMagic, 4);
    write_pod(out, kModelVersion);
    const C2fConfig& c = state.config;
    for (int v : {c.height, c.width, c.levels, c.base_channels, c.num_classes, c.image_channels,
                  c.regressor_hidden, c.fine_hidden})
        write_pod(out, static_cast<std::int32_t>(v));
    write_pod(out, c.leaky_slope);
    write_pod(out, c.theta_scale);

    std::uint32_t count = 0;
    for_each_param(state, [&](const std::string&, const std::vector<double>&) { ++count; });
    write_pod(out, count);
    for_each_param(state, [&](const std::string& name, const std::vector<double>& v) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint32_t>(1));  // rank
        write_pod(out, static_cast<std::uint64_t>(v.size()));
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    });
    if (!out) throw IoError("save_model: write failed for " + path);
}

C2fState load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_model: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("model: bad magic in " + path);
    if (read_pod<std::uint32_t>(in) != kModelVersion) throw FormatError("model: unsupported version");

    C2fConfig cfg;
    cfg.height = read_pod<std::int32_t>(in);
    cfg.width = read_pod<std::int32_t>(in);
    cfg.levels = read_pod<std::int32_t>(in);
    cfg.base_channels = read_pod<std::int32_t>(in);
    cfg.num_classes = read_pod<std::int32_t>(in);
    cfg.image_channels = read_pod<std::int32_t>(in);
    cfg.regressor_hidden = read_pod<std::int32_t>(in);
    cfg.fine_hidden = read_pod<std::int32_t>(in);
    cfg.leaky_slope = read_pod<double>(in);
    cfg.theta_scale = read_pod<double>(in);

    C2fState st = init_state(cfg, 0);
    std::map<std::string, std::vector<double>> table;
    const std::uint32_t count = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = read_pod<std::uint32_t>(in);
        std::uint64_t total = 1;
        for (std::uint32_t r = 0; r < rank; ++r) total *= read_pod<std::uint64_t>(in);
        std::vector<double> data(total);
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * 8));
        if (!in) throw FormatError("model: truncated tensor " + name);
        table.emplace(std::move(name), std::move(data));
    }
    for_each_param(st, [&](const std::string& name, std::vector<double>& v) {
        auto it = table.find(name);
        if (it == table.end()) throw FormatError("model: missing tensor " + name);
        if (it->second.size() != v.size()) throw FormatError("model: size mismatch for " + name);
        v = it->second;
    });
    return st;
}

}  // namespace fwn
