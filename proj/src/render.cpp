#include "towerlab/render.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace towerlab {

namespace {

std::uint8_t lighten(std::uint8_t c, double keep) {
  const double v = keep * static_cast<double>(c) + (1.0 - keep) * 255.0;
  return static_cast<std::uint8_t>(std::lround(v));
}

// Pixel i is covered iff its center lies in the closed world interval.
// Centers sit at (i + 0.5) / scale, so both edges map symmetrically and
// mirrored scenes rasterize to mirrored pixel arrays.
int first_covered(double world_lo, double scale) {
  return static_cast<int>(std::ceil(world_lo * scale - 0.5));
}
int last_covered(double world_hi, double scale) {
  return static_cast<int>(std::floor(world_hi * scale - 0.5));
}

}  // namespace

Image Image::filled(int w, int h, std::array<std::uint8_t, 3> rgb) {
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = rgb[0];
    img.pixels[i + 1] = rgb[1];
    img.pixels[i + 2] = rgb[2];
  }
  return img;
}

std::pair<int, int> world_to_pixel(double x, double y, const CameraConfig& cam) {
  const int px = static_cast<int>(std::llround(x * cam.scale));
  const int py = static_cast<int>(std::llround((cam.world_height - y) * cam.scale - 1.0));
  return {px, py};
}

Image rasterize(const TowerScene& scene, const CameraConfig& cam) {
  Image img = Image::filled(cam.image_width, cam.image_height, cam.background);

  // Floor line: two darker rows at the bottom edge.
  for (int y = cam.image_height - 2; y < cam.image_height; ++y) {
    for (int x = 0; x < cam.image_width; ++x) {
      std::uint8_t* p = img.at(x, y);
      p[0] = cam.floor_color[0];
      p[1] = cam.floor_color[1];
      p[2] = cam.floor_color[2];
    }
  }

  auto fill_rect = [&](double xl, double xr, double yb, double yt,
                       std::array<std::uint8_t, 3> rgb) {
    const int cx0 = first_covered(xl, cam.scale);
    const int cx1 = last_covered(xr, cam.scale);
    // Flipped y: row j center sits at world (image_height - j - 0.5) / scale.
    const int cy0 = first_covered(cam.world_height - yt, cam.scale);
    const int cy1 = last_covered(cam.world_height - yb, cam.scale);
    for (int y = std::max(cy0, 0); y <= std::min(cy1, cam.image_height - 1); ++y) {
      for (int x = std::max(cx0, 0); x <= std::min(cx1, cam.image_width - 1); ++x) {
        std::uint8_t* p = img.at(x, y);
        p[0] = rgb[0];
        p[1] = rgb[1];
        p[2] = rgb[2];
      }
    }
  };

  auto draw_block = [&](const Block& b) {
    if (first_covered(b.x_left(), cam.scale) < 0 ||
        last_covered(b.x_right(), cam.scale) >= cam.image_width ||
        first_covered(cam.world_height - b.y_top(), cam.scale) < 0 ||
        last_covered(cam.world_height - b.y_bottom, cam.scale) >= cam.image_height) {
      throw std::runtime_error("rasterize: block outside image (seed " +
                               std::to_string(scene.seed) + ")");
    }
    const double strip = cam.strip_frac * b.height;
    fill_rect(b.x_left(), b.x_right(), b.y_bottom, b.y_top() - strip, b.color);
    const std::array<std::uint8_t, 3> strip_rgb{
        lighten(b.color[0], cam.top_shade), lighten(b.color[1], cam.top_shade),
        lighten(b.color[2], cam.top_shade)};
    fill_rect(b.x_left(), b.x_right(), b.y_top() - strip, b.y_top(), strip_rgb);
  };

  for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
    if (static_cast<int>(i) == scene.displaced_index) continue;
    draw_block(scene.blocks[i]);
  }
  if (scene.displaced_index >= 0 &&
      scene.displaced_index < static_cast<int>(scene.blocks.size())) {
    draw_block(scene.displaced());
  }
  return img;
}

Image mirror_image(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* src = img.at(img.width - 1 - x, y);
      std::uint8_t* dst = out.at(x, y);
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  }
  return out;
}

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : img.pixels) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace towerlab
