#pragma once

#include "fwn/grid.hpp"

namespace fwn {

struct WarpGradients {
    ImageTensor d_image;  // adjoint w.r.t. the source image
    FlowField d_flow;     // adjoint w.r.t. the flow
};

// output(x,y,c) = bilinear sample of source at (x+dx, y+dy), clamp-to-edge.
ImageTensor warp_backward(const ImageTensor& source, const FlowField& flow);

// Exact adjoints of warp_backward. At integer sample coordinates the
// right/down-continuous branch of the piecewise-bilinear derivative is used.
WarpGradients warp_backward_grad(const ImageTensor& source, const FlowField& flow,
                                 const ImageTensor& upstream);

// Resamples a flow field along a carrier flow (channelwise bilinear warp).
FlowField warp_flow(const FlowField& target, const FlowField& carrier);

// Average-pool factor x factor blocks of vectors, then divide by factor so
// displacements stay in the coarser grid's pixel units.
FlowField downsample_flow(const FlowField& flow, int factor);

// Adjoint of downsample_flow; upstream has the pooled dimensions.
FlowField downsample_flow_grad(const FlowField& upstream, int factor);

// Per-pixel vector sum of the coarse and fine flows.
FlowField compose_flows(const FlowField& coarse, const FlowField& fine);

}  // namespace fwn
