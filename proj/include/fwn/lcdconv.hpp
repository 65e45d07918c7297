#pragma once

#include <vector>

#include "fwn/grid.hpp"

namespace fwn {

// 3x3 convolution, stride 1, dilation 1, zero padding 1.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> weights;  // [out][in][ky][kx]
    std::vector<double> bias;     // [out]

    ConvSpec() = default;
    ConvSpec(int in_c, int out_c)
        : in_channels(in_c),
          out_channels(out_c),
          weights(static_cast<std::size_t>(out_c) * in_c * 9, 0.0),
          bias(out_c, 0.0) {
        if (in_c <= 0 || out_c <= 0) throw ContractError("ConvSpec: non-positive channel count");
    }
    ConvSpec(int in_c, int out_c, std::vector<double> w, std::vector<double> b)
        : in_channels(in_c), out_channels(out_c), weights(std::move(w)), bias(std::move(b)) {
        if (weights.size() != static_cast<std::size_t>(out_c) * in_c * 9)
            throw ContractError("ConvSpec: weight buffer size does not match declared shape");
        if (bias.size() != static_cast<std::size_t>(out_c))
            throw ContractError("ConvSpec: bias buffer size does not match declared shape");
    }

    std::size_t windex(int o, int c, int k) const {
        return (static_cast<std::size_t>(o) * in_channels + c) * 9 + k;
    }
};

// Per-output-pixel, per-tap fractional 2D offsets, shape H x W x 9 x 2.
struct OffsetField {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    OffsetField() = default;
    OffsetField(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 9 * 2, 0.0) {
        if (h <= 0 || w <= 0) throw ContractError("OffsetField: non-positive dimensions");
    }

    std::size_t index(int x, int y, int k) const {
        return ((static_cast<std::size_t>(y) * width + x) * 9 + k) * 2;
    }
    double& dx(int x, int y, int k) { return data[index(x, y, k)]; }
    double dx(int x, int y, int k) const { return data[index(x, y, k)]; }
    double& dy(int x, int y, int k) { return data[index(x, y, k) + 1]; }
    double dy(int x, int y, int k) const { return data[index(x, y, k) + 1]; }
};

// Layout-constrained deformable convolution:
//   Y(p) = sum_k w_k . X(p + p_k + dp_k) * m_k,  m_k = [LO(p) == LO(round(p + p_k + dp_k))]
// Features sample bilinearly with zero padding; the layout lookup rounds
// half-up per axis, and taps rounding outside the image are gated off.
ImageTensor lc_dconv_forward(const ImageTensor& x, const ConvSpec& spec, const OffsetField& offsets,
                             const SemanticLayout& layout);

struct LcDconvGradients {
    ImageTensor d_x;
    std::vector<double> d_weights;
    std::vector<double> d_bias;
    OffsetField d_offsets;
};

// Exact adjoints of the forward with the gate treated as a constant.
LcDconvGradients lc_dconv_grad(const ImageTensor& x, const ConvSpec& spec, const OffsetField& offsets,
                               const SemanticLayout& layout, const ImageTensor& upstream);

}  // namespace fwn
