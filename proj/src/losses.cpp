#include "fwn/losses.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>

#include "fwn/warp.hpp"

namespace fwn {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }  // subgradient at 0 is 0

// 5-tap Gaussian, sigma 1, normalized.
constexpr int kBlurRadius = 2;

const std::array<double, 5>& blur_kernel() {
    static const std::array<double, 5> kernel = [] {
        std::array<double, 5> k{};
        double sum = 0.0;
        for (int i = -kBlurRadius; i <= kBlurRadius; ++i) {
            k[i + kBlurRadius] = std::exp(-0.5 * i * i);
            sum += k[i + kBlurRadius];
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Separable blur with clamp-to-edge indexing.
ImageTensor gauss_blur(const ImageTensor& in) {
    const auto& k = blur_kernel();
    const int H = in.height, W = in.width, C = in.channels;
    ImageTensor tmp(H, W, C), out(H, W, C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int t = -kBlurRadius; t <= kBlurRadius; ++t)
                    s += k[t + kBlurRadius] * in.at(clampi(x + t, 0, W - 1), y, c);
                tmp.at(x, y, c) = s;
            }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int t = -kBlurRadius; t <= kBlurRadius; ++t)
                    s += k[t + kBlurRadius] * tmp.at(x, clampi(y + t, 0, H - 1), c);
                out.at(x, y, c) = s;
            }
    return out;
}

// Adjoint of gauss_blur (scatter through the clamped taps, vertical pass first).
ImageTensor gauss_blur_grad(const ImageTensor& upstream) {
    const auto& k = blur_kernel();
    const int H = upstream.height, W = upstream.width, C = upstream.channels;
    ImageTensor tmp(H, W, C), out(H, W, C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const double u = upstream.at(x, y, c);
                if (u == 0.0) continue;
                for (int t = -kBlurRadius; t <= kBlurRadius; ++t)
                    tmp.at(x, clampi(y + t, 0, H - 1), c) += k[t + kBlurRadius] * u;
            }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const double u = tmp.at(x, y, c);
                if (u == 0.0) continue;
                for (int t = -kBlurRadius; t <= kBlurRadius; ++t)
                    out.at(clampi(x + t, 0, W - 1), y, c) += k[t + kBlurRadius] * u;
            }
    return out;
}

ImageTensor decimate2(const ImageTensor& in) {
    const int H = (in.height + 1) / 2, W = (in.width + 1) / 2;
    ImageTensor out(H, W, in.channels);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < in.channels; ++c) out.at(x, y, c) = in.at(2 * x, 2 * y, c);
    return out;
}

ImageTensor decimate2_grad(const ImageTensor& upstream, int src_h, int src_w) {
    ImageTensor out(src_h, src_w, upstream.channels);
    for (int y = 0; y < upstream.height; ++y)
        for (int x = 0; x < upstream.width; ++x)
            for (int c = 0; c < upstream.channels; ++c) out.at(2 * x, 2 * y, c) = upstream.at(x, y, c);
    return out;
}

class GaussianPyramid final : public PyramidFeatureExtractor {
  public:
    static constexpr int kLevels = 3;

    std::vector<ImageTensor> extract(const ImageTensor& image) const override {
        std::vector<ImageTensor> levels;
        levels.reserve(kLevels);
        levels.push_back(image);
        for (int l = 1; l < kLevels; ++l) levels.push_back(decimate2(gauss_blur(levels.back())));
        return levels;
    }

    ImageTensor extract_grad(const ImageTensor& image,
                             const std::vector<ImageTensor>& d_levels) const override {
        std::vector<ImageTensor> levels = extract(image);
        ImageTensor acc = d_levels.back();
        for (int l = kLevels - 2; l >= 0; --l) {
            ImageTensor up = gauss_blur_grad(decimate2_grad(acc, levels[l].height, levels[l].width));
            for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] += d_levels[l].data[i];
            acc = std::move(up);
        }
        return acc;
    }
};

}  // namespace

const PyramidFeatureExtractor& gaussian_pyramid_extractor() {
    static const GaussianPyramid instance;
    return instance;
}

std::string LossReport::to_json() const {
    nlohmann::json j{{"l_rec_fine", l_rec_fine}, {"l_rec_coarse", l_rec_coarse}, {"l_ftc", l_ftc},
                     {"l_tvl1", l_tvl1},         {"l_full", l_full},             {"lambda1", lambda1},
                     {"lambda2", lambda2}};
    return j.dump();
}

LossReport LossReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    LossReport r;
    r.l_rec_fine = j.at("l_rec_fine").get<double>();
    r.l_rec_coarse = j.at("l_rec_coarse").get<double>();
    r.l_ftc = j.at("l_ftc").get<double>();
    r.l_tvl1 = j.at("l_tvl1").get<double>();
    r.l_full = j.at("l_full").get<double>();
    r.lambda1 = j.at("lambda1").get<double>();
    r.lambda2 = j.at("lambda2").get<double>();
    return r;
}

double ftc_loss(const FlowField& f_t, const FlowField& f_prev, const FlowField& u,
                FlowField* d_ft, FlowField* d_fprev) {
    if (!f_t.same_shape(f_prev) || !f_t.same_shape(u))
        throw ContractError("ftc_loss: field dimensions differ");
    const int H = f_t.height, W = f_t.width;
    const double inv_n = 1.0 / (static_cast<double>(H) * W);

    const FlowField transported = warp_flow(f_prev, u);
    double loss = 0.0;
    FlowField sign_field(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            // Grouped so that f_t built as W_u(f_prev) + u cancels exactly.
            const double rx = f_t.dx(x, y) - (transported.dx(x, y) + u.dx(x, y));
            const double ry = f_t.dy(x, y) - (transported.dy(x, y) + u.dy(x, y));
            loss += std::abs(rx) + std::abs(ry);
            sign_field.set(x, y, sign0(rx), sign0(ry));
        }
    }
    loss *= inv_n;

    if (d_ft) {
        *d_ft = FlowField(H, W);
        for (std::size_t i = 0; i < d_ft->vectors.size(); ++i)
            d_ft->vectors[i] = sign_field.vectors[i] * inv_n;
    }
    if (d_fprev) {
        // Residual enters negatively through the transported field.
        ImageTensor up(H, W, 2);
        for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] = -sign_field.vectors[i] * inv_n;
        WarpGradients wg = warp_backward_grad(flow_as_image(f_prev), u, up);
        *d_fprev = image_as_flow(wg.d_image);
    }
    return loss;
}

double ftc_multiscale(const std::vector<FlowField>& flows, const std::map<int, FlowField>& gt_u) {
    if (flows.empty()) throw ContractError("ftc_multiscale: no flows");
    const int t = static_cast<int>(flows.size()) - 1;
    double total = 0.0;
    int used = 0;
    for (int lag : {1, 3, 9}) {
        auto it = gt_u.find(lag);
        if (it == gt_u.end() || t - lag < 0) continue;
        total += ftc_loss(flows[t], flows[t - lag], it->second);
        ++used;
    }
    if (used == 0) throw ContractError("ftc_multiscale: no usable lag");
    return total;
}

double tvl1_loss(const FlowField& f, FlowField* d_f) {
    const int H = f.height, W = f.width;
    const double inv_n = 1.0 / (static_cast<double>(H) * W);
    double loss = 0.0;
    if (d_f) *d_f = FlowField(H, W);
    auto accumulate = [&](int x0, int y0, int x1, int y1) {
        const double ddx = f.dx(x1, y1) - f.dx(x0, y0);
        const double ddy = f.dy(x1, y1) - f.dy(x0, y0);
        loss += std::abs(ddx) + std::abs(ddy);
        if (d_f) {
            const double sx = sign0(ddx) * inv_n;
            const double sy = sign0(ddy) * inv_n;
            d_f->dx(x1, y1) += sx;
            d_f->dx(x0, y0) -= sx;
            d_f->dy(x1, y1) += sy;
            d_f->dy(x0, y0) -= sy;
        }
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x) accumulate(x, y, x + 1, y);
    for (int y = 0; y + 1 < H; ++y)
        for (int x = 0; x < W; ++x) accumulate(x, y, x, y + 1);
    return loss * inv_n;
}

double rec_loss_with(const PyramidFeatureExtractor& features, const ImageTensor& pred,
                     const ImageTensor& target, ImageTensor* d_pred) {
    if (!pred.same_shape(target)) throw ContractError("rec_loss: shape mismatch");
    const std::vector<ImageTensor> lp = features.extract(pred);
    const std::vector<ImageTensor> lt = features.extract(target);

    double loss = 0.0;
    std::vector<ImageTensor> d_levels;
    d_levels.reserve(lp.size());
    for (std::size_t l = 0; l < lp.size(); ++l) {
        const double inv_n = 1.0 / (static_cast<double>(lp[l].height) * lp[l].width);
        double level = 0.0;
        ImageTensor dl(lp[l].height, lp[l].width, lp[l].channels);
        for (std::size_t i = 0; i < lp[l].data.size(); ++i) {
            const double r = lp[l].data[i] - lt[l].data[i];
            level += std::abs(r);
            dl.data[i] = sign0(r) * inv_n;
        }
        loss += level * inv_n;
        d_levels.push_back(std::move(dl));
    }
    if (d_pred) *d_pred = features.extract_grad(pred, d_levels);
    return loss;
}

double rec_loss(const ImageTensor& pred, const ImageTensor& target, ImageTensor* d_pred) {
    return rec_loss_with(gaussian_pyramid_extractor(), pred, target, d_pred);
}

LossReport full_objective(double rec_fine, double rec_coarse, double ftc, double tvl1,
                          double lambda1, double lambda2) {
    for (double v : {rec_fine, rec_coarse, ftc, tvl1})
        if (!std::isfinite(v)) throw NumericalError("full_objective: non-finite loss component");
    LossReport r;
    r.l_rec_fine = rec_fine;
    r.l_rec_coarse = rec_coarse;
    r.l_ftc = ftc;
    r.l_tvl1 = tvl1;
    r.lambda1 = lambda1;
    r.lambda2 = lambda2;
    r.l_full = rec_fine + rec_coarse + lambda1 * ftc + lambda2 * tvl1;
    return r;
}

}  // namespace fwn
