#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "towerlab/png_io.hpp"
#include "towerlab/render.hpp"
#include "towerlab/world.hpp"

using namespace towerlab;

namespace {
const WorldConfig kCfg;
const CameraConfig kCam;
}

TEST_CASE("world_to_pixel anchors") {
  // world origin -> bottom-left pixel
  auto [px0, py0] = world_to_pixel(0.0, 0.0, kCam);
  CHECK(px0 == 0);
  CHECK(py0 == kCam.image_height - 1);

  // world x-center -> pixel column 128
  auto [pxc, pyc] = world_to_pixel(640.0, 0.0, kCam);
  CHECK(pxc == 128);
  (void)pyc;

  // one block width spans 40 pixels at the default scale
  auto [pxa, pya] = world_to_pixel(300.0, 0.0, kCam);
  auto [pxb, pyb] = world_to_pixel(300.0 + kCfg.block_width, 0.0, kCam);
  CHECK(pxb - pxa == 40);
  (void)pya;
  (void)pyb;

  // y axis flips
  auto [pxh, pyh] = world_to_pixel(0.0, 1275.0, kCam);
  CHECK(pyh < py0);
  CHECK(pyh >= 0);
  (void)pxh;
}

TEST_CASE("pixel distances are linear in world distances") {
  for (double x = 0.0; x <= 1200.0; x += 37.0) {
    for (double delta : {5.0, 200.0, 413.0}) {
      if (x + delta > 1280.0) continue;
      auto [pa, ya] = world_to_pixel(x, 100.0, kCam);
      auto [pb, yb] = world_to_pixel(x + delta, 100.0, kCam);
      const double expect = delta * kCam.scale;
      CHECK(std::abs((pb - pa) - expect) <= 1.0);
      (void)ya;
      (void)yb;
    }
  }
}

TEST_CASE("rasterize is deterministic, byte for byte") {
  const TowerScene s = generate_top_block_scene(12, kCfg);
  const Image a = rasterize(s, kCam);
  const Image b = rasterize(s, kCam);
  CHECK(a.pixels == b.pixels);
}

TEST_CASE("golden image hashes are stable") {
  struct Golden {
    std::uint64_t seed;
    bool top;
    std::uint64_t hash;
  };
  const Golden golden[] = {
      {0, true, 0x75ac5af8050c04b5ULL},  {0, false, 0x980c94a8403cb065ULL},
      {1, true, 0xcb3f5920cc95cfe5ULL},  {1, false, 0xb7487ed8fb863b45ULL},
      {2, true, 0x09f8fbfd74cf0735ULL},  {2, false, 0x0c23a8e1733c4cd5ULL},
      {7, true, 0xebf6f63f5701f315ULL},  {7, false, 0x67c6999bd80a4345ULL},
  };
  for (const auto& g : golden) {
    const TowerScene s = g.top ? generate_top_block_scene(g.seed, kCfg)
                               : generate_side_block_scene(g.seed, kCfg);
    const std::uint64_t h = image_hash(rasterize(s, kCam));
    char got[32];
    std::snprintf(got, sizeof(got), "0x%016llx", static_cast<unsigned long long>(h));
    INFO("seed ", g.seed, " top ", g.top, " got ", got);
    CHECK(h == g.hash);
  }
}

TEST_CASE("empty scene renders only background furniture") {
  TowerScene empty;
  empty.displaced_index = -1;
  empty.dataset_kind = DatasetKind::TopBlock;
  const Image img = rasterize(empty, kCam);

  // reference: background fill + floor rows, built independently
  Image ref = Image::filled(kCam.image_width, kCam.image_height, kCam.background);
  for (int y = kCam.image_height - 2; y < kCam.image_height; ++y) {
    for (int x = 0; x < kCam.image_width; ++x) {
      auto* p = ref.at(x, y);
      p[0] = kCam.floor_color[0];
      p[1] = kCam.floor_color[1];
      p[2] = kCam.floor_color[2];
    }
  }
  CHECK(img.pixels == ref.pixels);
}

TEST_CASE("mirrored scenes rasterize to mirrored pixels") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const TowerScene s = seed % 2 == 0 ? generate_top_block_scene(seed, kCfg)
                                       : generate_side_block_scene(seed, kCfg);
    const Image img = rasterize(s, kCam);
    const Image mirrored = rasterize(mirror_scene(s, kCfg), kCam);
    CHECK(mirror_image(img).pixels == mirrored.pixels);
  }
}

TEST_CASE("blocks refuse to render outside the image") {
  TowerScene s = generate_top_block_scene(1, kCfg);
  s.blocks.back().x_center = 1300.0;  // sticks out on the right
  CHECK_THROWS(rasterize(s, kCam));
  TowerScene tall = generate_top_block_scene(1, kCfg);
  tall.blocks.back().y_bottom = 1300.0;
  CHECK_THROWS(rasterize(tall, kCam));
}

TEST_CASE("block pixels land where world_to_pixel says") {
  const TowerScene s = generate_top_block_scene(4, kCfg);
  const Image img = rasterize(s, kCam);
  const Block& base = s.blocks.front();
  // sample the center of the bottom block body: must be the block color
  auto [px, py] = world_to_pixel(base.x_center, base.y_bottom + 0.4 * base.height, kCam);
  const std::uint8_t* p = img.at(px, py);
  CHECK(p[0] == base.color[0]);
  CHECK(p[1] == base.color[1]);
  CHECK(p[2] == base.color[2]);
  // and the top strip is lighter than the body
  const double strip_mid = base.y_top() - 0.5 * kCam.strip_frac * base.height;
  auto [sx, sy] = world_to_pixel(base.x_center, strip_mid, kCam);
  const std::uint8_t* sp = img.at(sx, sy);
  const int body = p[0] + p[1] + p[2];
  const int strip = sp[0] + sp[1] + sp[2];
  CHECK(strip > body);
}

TEST_CASE("png round trip preserves pixels exactly") {
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string path = dir + "/towerlab_test_roundtrip.png";
  const TowerScene s = generate_side_block_scene(5, kCfg);
  const Image img = rasterize(s, kCam);
  write_png(path, img);
  const Image back = read_png(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
  std::filesystem::remove(path);
}

TEST_CASE("png writes are byte-identical across calls") {
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string p1 = dir + "/towerlab_det_1.png";
  const std::string p2 = dir + "/towerlab_det_2.png";
  const Image img = rasterize(generate_top_block_scene(9, kCfg), kCam);
  write_png(p1, img);
  write_png(p2, img);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("resample shrinks to the policy input size") {
  const Image img = rasterize(generate_top_block_scene(2, kCfg), kCam);
  const Image up = resample(img, 300, 220);
  const Image back = resample(up, 256, 256);
  CHECK(back.width == 256);
  CHECK(back.height == 256);
  // identity resample is exact
  const Image same = resample(img, 256, 256);
  CHECK(same.pixels == img.pixels);
}
