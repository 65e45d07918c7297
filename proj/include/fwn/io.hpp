#pragma once

#include <string>

#include "fwn/grid.hpp"

namespace fwn {

// Middlebury .flo: float magic 202021.25 ("PIEH"), int32 width, int32 height,
// then width*height interleaved (dx, dy) float32 pairs, all little-endian.
FlowField read_flo(const std::string& path);
void write_flo(const FlowField& flow, const std::string& path);

// 8-bit images. Format picked by extension: .png (libpng), .pgm (P5, 1ch),
// .ppm (P6, 3ch). Values are normalized to [0,1] on read and quantized with
// round-half-up on write.
ImageTensor read_image(const std::string& path);
void write_image(const ImageTensor& image, const std::string& path);

// Layouts are raw class IDs in an 8-bit single-channel file (.pgm or .png).
// num_classes == 0 infers max ID + 1.
SemanticLayout read_layout(const std::string& path, int num_classes = 0);
void write_layout(const SemanticLayout& layout, const std::string& path);

}  // namespace fwn
