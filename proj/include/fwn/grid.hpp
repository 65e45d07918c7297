#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fwn/errors.hpp"

namespace fwn {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Coordinate convention used everywhere: x grows rightward, y grows downward,
// pixel centers at integer coordinates. Buffers are row-major with channels
// interleaved: index = (y * width + x) * channels + c.

// Dense H x W x C grid of doubles. Image-valued tensors hold [0,1]; feature
// volumes are unbounded.
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    ImageTensor() = default;

    ImageTensor(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
        if (h <= 0 || w <= 0 || c <= 0) throw ContractError("ImageTensor: non-positive dimensions");
    }

    ImageTensor(int h, int w, int c, std::vector<double> values)
        : height(h), width(w), channels(c), data(std::move(values)) {
        if (h <= 0 || w <= 0 || c <= 0) throw ContractError("ImageTensor: non-positive dimensions");
        if (data.size() != static_cast<std::size_t>(h) * w * c)
            throw ContractError("ImageTensor: buffer size does not match dimensions");
    }

    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c) { return data[index(x, y, c)]; }
    double at(int x, int y, int c) const { return data[index(x, y, c)]; }

    bool same_shape(const ImageTensor& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// Per-pixel small-integer class IDs; class 0 is background/empty.
struct SemanticLayout {
    int height = 0;
    int width = 0;
    int num_classes = 1;
    std::vector<std::uint8_t> classes;

    SemanticLayout() = default;

    SemanticLayout(int h, int w, int nc)
        : height(h), width(w), num_classes(nc), classes(static_cast<std::size_t>(h) * w, 0) {
        if (h <= 0 || w <= 0 || nc <= 0) throw ContractError("SemanticLayout: non-positive dimensions");
    }

    SemanticLayout(int h, int w, int nc, std::vector<std::uint8_t> ids)
        : height(h), width(w), num_classes(nc), classes(std::move(ids)) {
        if (h <= 0 || w <= 0 || nc <= 0) throw ContractError("SemanticLayout: non-positive dimensions");
        if (classes.size() != static_cast<std::size_t>(h) * w)
            throw ContractError("SemanticLayout: buffer size does not match dimensions");
        for (std::uint8_t id : classes)
            if (id >= num_classes) throw ContractError("SemanticLayout: class ID exceeds declared class count");
    }

    std::uint8_t& at(int x, int y) { return classes[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return classes[static_cast<std::size_t>(y) * width + x]; }
};

// Dense backward flow: the vector at (x, y) points to the source position
// (x + dx, y + dy) to sample from.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> vectors;  // (dx, dy) interleaved

    FlowField() = default;

    FlowField(int h, int w) : height(h), width(w), vectors(static_cast<std::size_t>(h) * w * 2, 0.0) {
        if (h <= 0 || w <= 0) throw ContractError("FlowField: non-positive dimensions");
    }

    FlowField(int h, int w, std::vector<double> values)
        : height(h), width(w), vectors(std::move(values)) {
        if (h <= 0 || w <= 0) throw ContractError("FlowField: non-positive dimensions");
        if (vectors.size() != static_cast<std::size_t>(h) * w * 2)
            throw ContractError("FlowField: buffer size does not match dimensions");
        for (double v : vectors)
            if (!std::isfinite(v)) throw ContractError("FlowField: non-finite component");
    }

    std::size_t index(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 2; }
    double& dx(int x, int y) { return vectors[index(x, y)]; }
    double dx(int x, int y) const { return vectors[index(x, y)]; }
    double& dy(int x, int y) { return vectors[index(x, y) + 1]; }
    double dy(int x, int y) const { return vectors[index(x, y) + 1]; }
    void set(int x, int y, double vx, double vy) {
        vectors[index(x, y)] = vx;
        vectors[index(x, y) + 1] = vy;
    }

    bool same_shape(const FlowField& o) const { return height == o.height && width == o.width; }

    bool is_finite() const {
        for (double v : vectors)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Reinterpret a flow as a 2-channel feature volume (dx = channel 0, dy = 1).
inline ImageTensor flow_as_image(const FlowField& f) {
    return ImageTensor(f.height, f.width, 2, f.vectors);
}

inline FlowField image_as_flow(const ImageTensor& t) {
    if (t.channels != 2) throw ContractError("image_as_flow: expected 2 channels");
    return FlowField(t.height, t.width, t.data);
}

}  // namespace fwn
