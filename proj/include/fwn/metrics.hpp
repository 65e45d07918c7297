#pragma once

#include <vector>

#include "fwn/grid.hpp"

namespace fwn {

// 10 * log10(1 / MSE) for images in [0,1]; +infinity when identical.
double psnr(const ImageTensor& a, const ImageTensor& b);

// Standard SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1, averaged over valid window positions and channels.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Temporal consistency metric. lag1_flows[i] is the backward optical flow
// carried by frame i+1 toward frame i (the Eq. 2 "from t to t-l" convention),
// so the warping error of pair (i, i+1) is
// mean-abs(frames[i+1] - warp_backward(frames[i], lag1_flows[i])).
// TCM = 1 / (1 + 10 * mean pair error), in (0, 1].
double tcm(const std::vector<ImageTensor>& frames, const std::vector<FlowField>& lag1_flows);

}  // namespace fwn
