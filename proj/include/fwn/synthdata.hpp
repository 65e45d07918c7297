#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fwn/grid.hpp"

namespace fwn {

enum class MotionKind { kAffine, kTps };

// A textured two-part sprite (class 1 "tops" ellipse stacked on class 2
// "bottoms" rectangle) moving over a textured background. Motion is either a
// global affine pose oscillation or a chain of small TPS steps; both give
// analytically exact backward flows.
struct SpriteScene {
    std::uint64_t seed = 1;
    int size = 64;
    MotionKind motion = MotionKind::kAffine;
    double translate_amp = 3.0;  // pixels, oscillating part
    double rotate_amp = 0.05;    // radians
    double scale_amp = 0.04;
    double tps_amp = 0.06;       // normalized lattice units
    // Constant drift in backward-flow terms: frame t samples frame t-1 at
    // x + (velocity_x, velocity_y), so the lag-l flow is l * velocity.
    double velocity_x = 0.0;
    double velocity_y = 0.0;
};

struct FrameData {
    ImageTensor image;                  // RGB in [0,1]
    SemanticLayout layout;              // {0: background, 1: tops, 2: bottoms}
    FlowField flow_to_exemplar;         // backward flow to frame 0
    std::map<int, FlowField> lag_flows; // lag -> U ("from t to t-lag"), lags {1,3,9}
};

struct Dataset {
    SpriteScene scene;
    int width = 0;
    int height = 0;
    int num_classes = 3;
    std::vector<FrameData> frames;
};

// Frames, layouts and all ground-truth flows, deterministic per seed. Flow
// vectors are quantized to float32 at generation time so exported .flo files
// and in-memory fields agree bit-exactly. Throws GenerationError if the
// sprite gets within 2 px of the canvas border.
Dataset generate(const SpriteScene& scene, int frames);

// Writes frames/%04d.png, layouts/%04d.pgm, flows/exemplar_%04d.flo,
// flows/lag%d_%04d.flo and manifest.json under dir.
void export_dataset(const Dataset& dataset, const std::string& dir);

Dataset import_dataset(const std::string& dir);

// Image with non-clothing pixels (class 0) zeroed.
ImageTensor clothing_foreground(const ImageTensor& image, const SemanticLayout& layout);

}  // namespace fwn
