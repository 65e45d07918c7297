#include "fwn/lcdconv.hpp"

#include <cmath>

#include "fwn/parallel.hpp"

namespace fwn {

namespace {

// Regular sampling positions p_k for the 3x3 kernel, k row-major.
constexpr int kTapX[9] = {-1, 0, 1, -1, 0, 1, -1, 0, 1};
constexpr int kTapY[9] = {-1, -1, -1, 0, 0, 0, 1, 1, 1};

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

void check_shapes(const ImageTensor& x, const ConvSpec& spec, const OffsetField& offsets,
                  const SemanticLayout& layout, const char* who) {
    if (x.channels != spec.in_channels) throw ContractError(std::string(who) + ": input channel mismatch");
    if (offsets.height != x.height || offsets.width != x.width)
        throw ContractError(std::string(who) + ": offset field dimensions differ from input");
    if (layout.height != x.height || layout.width != x.width)
        throw ContractError(std::string(who) + ": layout dimensions differ from input");
}

}  // namespace

ImageTensor lc_dconv_forward(const ImageTensor& x, const ConvSpec& spec, const OffsetField& offsets,
                             const SemanticLayout& layout) {
    check_shapes(x, spec, offsets, layout, "lc_dconv_forward");
    const int H = x.height, W = x.width;
    const int Cin = spec.in_channels, Cout = spec.out_channels;
    ImageTensor out(H, W, Cout);

    parallel_for(0, H, [&](int py) {
        std::vector<double> sample(Cin);
        std::vector<double> acc(Cout);
        for (int px = 0; px < W; ++px) {
            for (int o = 0; o < Cout; ++o) acc[o] = spec.bias[o];
            const int cls = layout.at(px, py);
            for (int k = 0; k < 9; ++k) {
                const double sx = px + kTapX[k] + offsets.dx(px, py, k);
                const double sy = py + kTapY[k] + offsets.dy(px, py, k);
                const int rx = round_half_up(sx);
                const int ry = round_half_up(sy);
                if (rx < 0 || rx >= W || ry < 0 || ry >= H) continue;  // no class => gated off
                if (layout.at(rx, ry) != cls) continue;

                // Bilinear with zero padding.
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0;
                const double fy = sy - y0;
                for (int c = 0; c < Cin; ++c) sample[c] = 0.0;
                for (int dy = 0; dy <= 1; ++dy) {
                    const int yy = y0 + dy;
                    if (yy < 0 || yy >= H) continue;
                    const double wy = dy == 0 ? 1.0 - fy : fy;
                    for (int dxi = 0; dxi <= 1; ++dxi) {
                        const int xx = x0 + dxi;
                        if (xx < 0 || xx >= W) continue;
                        const double wgt = wy * (dxi == 0 ? 1.0 - fx : fx);
                        if (wgt == 0.0) continue;
                        for (int c = 0; c < Cin; ++c) sample[c] += wgt * x.at(xx, yy, c);
                    }
                }
                for (int o = 0; o < Cout; ++o) {
                    double s = 0.0;
                    for (int c = 0; c < Cin; ++c) s += spec.weights[spec.windex(o, c, k)] * sample[c];
                    acc[o] += s;
                }
            }
            for (int o = 0; o < Cout; ++o) out.at(px, py, o) = acc[o];
        }
    });
    return out;
}

LcDconvGradients lc_dconv_grad(const ImageTensor& x, const ConvSpec& spec, const OffsetField& offsets,
                               const SemanticLayout& layout, const ImageTensor& upstream) {
    check_shapes(x, spec, offsets, layout, "lc_dconv_grad");
    if (upstream.height != x.height || upstream.width != x.width || upstream.channels != spec.out_channels)
        throw ContractError("lc_dconv_grad: upstream shape differs from forward output");
    const int H = x.height, W = x.width;
    const int Cin = spec.in_channels, Cout = spec.out_channels;

    LcDconvGradients g;
    g.d_x = ImageTensor(H, W, Cin);
    g.d_weights.assign(spec.weights.size(), 0.0);
    g.d_bias.assign(spec.bias.size(), 0.0);
    g.d_offsets = OffsetField(H, W);

    std::vector<double> sample(Cin), grad_x(Cin), grad_y(Cin), gsamp(Cin);
    for (int py = 0; py < H; ++py) {
        for (int px = 0; px < W; ++px) {
            for (int o = 0; o < Cout; ++o) g.d_bias[o] += upstream.at(px, py, o);
            const int cls = layout.at(px, py);
            for (int k = 0; k < 9; ++k) {
                const double sx = px + kTapX[k] + offsets.dx(px, py, k);
                const double sy = py + kTapY[k] + offsets.dy(px, py, k);
                const int rx = round_half_up(sx);
                const int ry = round_half_up(sy);
                if (rx < 0 || rx >= W || ry < 0 || ry >= H) continue;
                if (layout.at(rx, ry) != cls) continue;

                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0;
                const double fy = sy - y0;

                // Gather corner values (zero outside) plus the bilinear
                // spatial derivative of the sample per channel.
                double corner[2][2];
                for (int c = 0; c < Cin; ++c) {
                    for (int dy = 0; dy <= 1; ++dy)
                        for (int dxi = 0; dxi <= 1; ++dxi) {
                            const int yy = y0 + dy, xx = x0 + dxi;
                            corner[dy][dxi] =
                                (yy >= 0 && yy < H && xx >= 0 && xx < W) ? x.at(xx, yy, c) : 0.0;
                        }
                    sample[c] = (1 - fx) * (1 - fy) * corner[0][0] + fx * (1 - fy) * corner[0][1] +
                                (1 - fx) * fy * corner[1][0] + fx * fy * corner[1][1];
                    grad_x[c] = (corner[0][1] - corner[0][0]) * (1 - fy) + (corner[1][1] - corner[1][0]) * fy;
                    grad_y[c] = (corner[1][0] - corner[0][0]) * (1 - fx) + (corner[1][1] - corner[0][1]) * fx;
                }

                for (int c = 0; c < Cin; ++c) gsamp[c] = 0.0;
                for (int o = 0; o < Cout; ++o) {
                    const double u = upstream.at(px, py, o);
                    if (u == 0.0) continue;
                    for (int c = 0; c < Cin; ++c) {
                        g.d_weights[spec.windex(o, c, k)] += u * sample[c];
                        gsamp[c] += u * spec.weights[spec.windex(o, c, k)];
                    }
                }

                double gox = 0.0, goy = 0.0;
                for (int c = 0; c < Cin; ++c) {
                    const double gs = gsamp[c];
                    if (gs == 0.0) continue;
                    gox += gs * grad_x[c];
                    goy += gs * grad_y[c];
                    for (int dy = 0; dy <= 1; ++dy) {
                        const int yy = y0 + dy;
                        if (yy < 0 || yy >= H) continue;
                        const double wy = dy == 0 ? 1.0 - fy : fy;
                        for (int dxi = 0; dxi <= 1; ++dxi) {
                            const int xx = x0 + dxi;
                            if (xx < 0 || xx >= W) continue;
                            const double wgt = wy * (dxi == 0 ? 1.0 - fx : fx);
                            if (wgt != 0.0) g.d_x.at(xx, yy, c) += gs * wgt;
                        }
                    }
                }
                g.d_offsets.dx(px, py, k) += gox;
                g.d_offsets.dy(px, py, k) += goy;
            }
        }
    }
    return g;
}

}  // namespace fwn
