#pragma once

#include <string>

#include "towerlab/render.hpp"

namespace towerlab {

// Minimal deterministic PNG writer (8-bit RGB, filter 0, fixed zlib level).
void write_png(const std::string& path, const Image& img);

// Reader for 8-bit non-interlaced PNGs (gray, gray+alpha, RGB, RGBA, palette);
// throws on anything else, naming the file.
Image read_png(const std::string& path);

// Bilinear resample to the requested size.
Image resample(const Image& img, int w, int h);

}  // namespace towerlab
