#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "towerlab/world.hpp"

namespace towerlab {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  static Image filled(int w, int h, std::array<std::uint8_t, 3> rgb);
  std::uint8_t* at(int x, int y) {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
  }
};

struct CameraConfig {
  double scale = 0.2;            // pixels per world unit
  double world_height = 1280.0;  // vertical extent mapped onto the image
  int image_width = 256;
  int image_height = 256;
  std::array<std::uint8_t, 3> background{245, 245, 245};
  std::array<std::uint8_t, 3> floor_color{70, 70, 70};
  double top_shade = 0.55;   // fraction of block color kept in the top strip
  double strip_frac = 0.15;  // top strip height as a fraction of block height
};

// Affine world->pixel map, y flipped (image origin top-left), rounding half
// away from zero. World origin lands on the bottom-left pixel.
std::pair<int, int> world_to_pixel(double x, double y, const CameraConfig& cam);

// Orthographic front view: filled squares with a lighter top strip, floor line
// at y = 0, painter's order bottom-to-top with the displaced block last.
// Throws if any block projects outside the image.
Image rasterize(const TowerScene& scene, const CameraConfig& cam);

// Horizontal flip, used by mirror-symmetry checks.
Image mirror_image(const Image& img);

// FNV-1a over raw pixel bytes; the golden-image fingerprint.
std::uint64_t image_hash(const Image& img);

}  // namespace towerlab
