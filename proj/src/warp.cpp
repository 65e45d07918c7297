#include "fwn/warp.hpp"

#include <algorithm>
#include <cmath>

#include "fwn/parallel.hpp"

namespace fwn {

namespace {

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Corner indices and interpolation weights for a clamped bilinear sample.
struct Bilinear {
    int x0, x1, y0, y1;
    double fx, fy;
};

Bilinear setup(double sx, double sy, int width, int height) {
    Bilinear b;
    sx = clampd(sx, 0.0, width - 1.0);
    sy = clampd(sy, 0.0, height - 1.0);
    b.x0 = static_cast<int>(std::floor(sx));
    b.y0 = static_cast<int>(std::floor(sy));
    b.x1 = std::min(b.x0 + 1, width - 1);
    b.y1 = std::min(b.y0 + 1, height - 1);
    b.fx = sx - b.x0;
    b.fy = sy - b.y0;
    return b;
}

}  // namespace

ImageTensor warp_backward(const ImageTensor& source, const FlowField& flow) {
    if (source.height != flow.height || source.width != flow.width)
        throw ContractError("warp_backward: source and flow dimensions differ");
    const int H = source.height, W = source.width, C = source.channels;
    ImageTensor out(H, W, C);
    parallel_for(0, H, [&](int y) {
        for (int x = 0; x < W; ++x) {
            const Bilinear b = setup(x + flow.dx(x, y), y + flow.dy(x, y), W, H);
            for (int c = 0; c < C; ++c) {
                const double v00 = source.at(b.x0, b.y0, c);
                const double v10 = source.at(b.x1, b.y0, c);
                const double v01 = source.at(b.x0, b.y1, c);
                const double v11 = source.at(b.x1, b.y1, c);
                out.at(x, y, c) = (1 - b.fx) * (1 - b.fy) * v00 + b.fx * (1 - b.fy) * v10 +
                                  (1 - b.fx) * b.fy * v01 + b.fx * b.fy * v11;
            }
        }
    });
    return out;
}

WarpGradients warp_backward_grad(const ImageTensor& source, const FlowField& flow,
                                 const ImageTensor& upstream) {
    if (source.height != flow.height || source.width != flow.width)
        throw ContractError("warp_backward_grad: source and flow dimensions differ");
    if (!source.same_shape(upstream))
        throw ContractError("warp_backward_grad: upstream shape differs from forward output");
    const int H = source.height, W = source.width, C = source.channels;
    WarpGradients g{ImageTensor(H, W, C), FlowField(H, W)};
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double sx = x + flow.dx(x, y);
            const double sy = y + flow.dy(x, y);
            const Bilinear b = setup(sx, sy, W, H);
            // Clamp saturates: outside the grid the sample no longer depends on
            // the flow. Boundaries take the right/down-continuous branch.
            const bool live_x = sx >= 0.0 && sx < W - 1.0;
            const bool live_y = sy >= 0.0 && sy < H - 1.0;
            double gx = 0.0, gy = 0.0;
            for (int c = 0; c < C; ++c) {
                const double u = upstream.at(x, y, c);
                if (u == 0.0) continue;
                const double v00 = source.at(b.x0, b.y0, c);
                const double v10 = source.at(b.x1, b.y0, c);
                const double v01 = source.at(b.x0, b.y1, c);
                const double v11 = source.at(b.x1, b.y1, c);
                g.d_image.at(b.x0, b.y0, c) += u * (1 - b.fx) * (1 - b.fy);
                g.d_image.at(b.x1, b.y0, c) += u * b.fx * (1 - b.fy);
                g.d_image.at(b.x0, b.y1, c) += u * (1 - b.fx) * b.fy;
                g.d_image.at(b.x1, b.y1, c) += u * b.fx * b.fy;
                if (live_x) gx += u * ((v10 - v00) * (1 - b.fy) + (v11 - v01) * b.fy);
                if (live_y) gy += u * ((v01 - v00) * (1 - b.fx) + (v11 - v10) * b.fx);
            }
            g.d_flow.set(x, y, gx, gy);
        }
    }
    return g;
}

FlowField warp_flow(const FlowField& target, const FlowField& carrier) {
    if (!target.same_shape(carrier)) throw ContractError("warp_flow: field dimensions differ");
    return image_as_flow(warp_backward(flow_as_image(target), carrier));
}

FlowField downsample_flow(const FlowField& flow, int factor) {
    if (factor < 1) throw ContractError("downsample_flow: factor must be >= 1");
    if (flow.height % factor != 0 || flow.width % factor != 0)
        throw ContractError("downsample_flow: dimensions not divisible by factor");
    if (factor == 1) return flow;
    const int H = flow.height / factor, W = flow.width / factor;
    FlowField out(H, W);
    const double norm = 1.0 / (static_cast<double>(factor) * factor * factor);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sx = 0.0, sy = 0.0;
            for (int by = 0; by < factor; ++by) {
                for (int bx = 0; bx < factor; ++bx) {
                    sx += flow.dx(x * factor + bx, y * factor + by);
                    sy += flow.dy(x * factor + bx, y * factor + by);
                }
            }
            out.set(x, y, sx * norm, sy * norm);
        }
    }
    return out;
}

FlowField downsample_flow_grad(const FlowField& upstream, int factor) {
    if (factor < 1) throw ContractError("downsample_flow_grad: factor must be >= 1");
    if (factor == 1) return upstream;
    const int H = upstream.height * factor, W = upstream.width * factor;
    FlowField out(H, W);
    const double norm = 1.0 / (static_cast<double>(factor) * factor * factor);
    for (int y = 0; y < upstream.height; ++y) {
        for (int x = 0; x < upstream.width; ++x) {
            const double gx = upstream.dx(x, y) * norm;
            const double gy = upstream.dy(x, y) * norm;
            for (int by = 0; by < factor; ++by)
                for (int bx = 0; bx < factor; ++bx)
                    out.set(x * factor + bx, y * factor + by, gx, gy);
        }
    }
    return out;
}

FlowField compose_flows(const FlowField& coarse, const FlowField& fine) {
    if (!coarse.same_shape(fine)) throw ContractError("compose_flows: field dimensions differ");
    FlowField out = coarse;
    for (std::size_t i = 0; i < out.vectors.size(); ++i) out.vectors[i] += fine.vectors[i];
    return out;
}

}  // namespace fwn
