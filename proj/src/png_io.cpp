#include "towerlab/png_io.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace towerlab {

namespace {

void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("png: " + path + ": " + why);
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len,
                       std::uint32_t seed = 0) {
  return static_cast<std::uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const std::uint32_t crc = crc32_of(out.data() + crc_start, out.size() - crc_start);
  put_u32(out, crc);
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter type none
    raw.insert(raw.end(), img.at(0, y), img.at(0, y) + stride);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    fail(path, "deflate failed");
  }
  compressed.resize(bound);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(path, "cannot open for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) fail(path, "write failed");
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (data.size() < 8 || std::memcmp(data.data(), magic, 8) != 0) {
    fail(path, "not a PNG file");
  }

  std::uint32_t width = 0, height = 0;
  int bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  std::vector<std::array<std::uint8_t, 3>> palette;

  std::size_t pos = 8;
  while (pos + 8 <= data.size()) {
    const std::uint32_t len = read_u32(&data[pos]);
    if (pos + 12 + len > data.size()) fail(path, "truncated chunk");
    const char* type = reinterpret_cast<const char*>(&data[pos + 4]);
    const std::uint8_t* payload = &data[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) fail(path, "bad IHDR");
      width = read_u32(payload);
      height = read_u32(payload + 4);
      bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      for (std::uint32_t i = 0; i + 2 < len; i += 3) {
        palette.push_back({payload[i], payload[i + 1], payload[i + 2]});
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }

  if (width == 0 || height == 0) fail(path, "missing IHDR");
  if (bit_depth != 8) fail(path, "unsupported bit depth (only 8 supported)");
  if (interlace != 0) fail(path, "interlaced PNG not supported");
  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;  // gray
    case 2: channels = 3; break;  // rgb
    case 3: channels = 1; break;  // palette
    case 4: channels = 2; break;  // gray+alpha
    case 6: channels = 4; break;  // rgba
    default: fail(path, "unsupported color type");
  }
  if (color_type == 3 && palette.empty()) fail(path, "palette image without PLTE");

  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  const std::size_t raw_size = (stride + 1) * height;
  std::vector<std::uint8_t> raw(raw_size);
  uLongf out_len = static_cast<uLongf>(raw_size);
  const int rc = uncompress(raw.data(), &out_len, idat.data(),
                            static_cast<uLong>(idat.size()));
  if (rc != Z_OK || out_len != raw_size) fail(path, "inflate failed");

  // Undo per-row filters in place.
  std::vector<std::uint8_t> prev(stride, 0);
  std::vector<std::uint8_t> cur(stride);
  Image img;
  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);

  for (std::uint32_t y = 0; y < height; ++y) {
    const std::uint8_t* row = &raw[(stride + 1) * y];
    const int filter = row[0];
    const std::uint8_t* src = row + 1;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(channels) ? cur[i - static_cast<std::size_t>(channels)] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(channels) ? prev[i - static_cast<std::size_t>(channels)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: fail(path, "unknown filter type");
      }
      cur[i] = static_cast<std::uint8_t>(v & 0xFF);
    }
    for (std::uint32_t x = 0; x < width; ++x) {
      std::uint8_t r = 0, g = 0, bch = 0;
      const std::uint8_t* px = &cur[static_cast<std::size_t>(x) * static_cast<std::size_t>(channels)];
      switch (color_type) {
        case 0: case 4: r = g = bch = px[0]; break;
        case 2: case 6: r = px[0]; g = px[1]; bch = px[2]; break;
        default: {
          if (px[0] >= palette.size()) fail(path, "palette index out of range");
          const auto& pe = palette[px[0]];
          r = pe[0]; g = pe[1]; bch = pe[2];
          break;
        }
      }
      std::uint8_t* dst = img.at(static_cast<int>(x), static_cast<int>(y));
      dst[0] = r;
      dst[1] = g;
      dst[2] = bch;
    }
    std::swap(prev, cur);
  }
  return img;
}

Image resample(const Image& img, int w, int h) {
  if (img.width == w && img.height == h) return img;
  Image out;
  out.width = w;
  out.height = h;
  out.pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (int y = 0; y < h; ++y) {
    const double sy = (static_cast<double>(y) + 0.5) * img.height / h - 0.5;
    const int y0 = std::max(0, static_cast<int>(std::floor(sy)));
    const int y1 = std::min(img.height - 1, y0 + 1);
    const double fy = sy - std::floor(sy);
    for (int x = 0; x < w; ++x) {
      const double sx = (static_cast<double>(x) + 0.5) * img.width / w - 0.5;
      const int x0 = std::max(0, static_cast<int>(std::floor(sx)));
      const int x1 = std::min(img.width - 1, x0 + 1);
      const double fx = sx - std::floor(sx);
      for (int c = 0; c < 3; ++c) {
        const double v00 = img.at(x0, y0)[c];
        const double v10 = img.at(x1, y0)[c];
        const double v01 = img.at(x0, y1)[c];
        const double v11 = img.at(x1, y1)[c];
        const double v = (1 - fy) * ((1 - fx) * v00 + fx * v10) +
                         fy * ((1 - fx) * v01 + fx * v11);
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

}  // namespace towerlab
