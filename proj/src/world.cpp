#include "towerlab/world.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "json.hpp"
#include "towerlab/rng.hpp"

namespace towerlab {

namespace {

constexpr double kHeightEps = 1e-9;

// 8 saturated colors, all clearly darker than the background in channel sum.
constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
    {200, 30, 30},    // red
    {30, 160, 40},    // green
    {30, 60, 200},    // blue
    {230, 190, 20},   // yellow
    {190, 30, 170},   // magenta
    {20, 170, 180},   // cyan
    {235, 130, 20},   // orange
    {120, 40, 190},   // purple
}};

std::vector<std::array<std::uint8_t, 3>> draw_colors(Rng& rng, int n) {
  std::vector<int> idx(kPalette.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  rng.shuffle(idx);
  std::vector<std::array<std::uint8_t, 3>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(kPalette[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  return out;
}

bool top_offset_stable(double offset_magnitude, const WorldConfig& cfg) {
  // Edge tie resolves to unstable.
  return offset_magnitude < cfg.stability_margin * cfg.block_width;
}

}  // namespace

const char* dataset_name(DatasetKind kind) {
  return kind == DatasetKind::TopBlock ? "top_block" : "side_block";
}

std::optional<DatasetKind> dataset_from_name(const std::string& name) {
  if (name == "top_block" || name == "top-block") return DatasetKind::TopBlock;
  if (name == "side_block" || name == "side-block") return DatasetKind::SideBlock;
  return std::nullopt;
}

double TowerScene::tower_center_x() const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (static_cast<int>(i) != displaced_index) return blocks[i].x_center;
  }
  return blocks.empty() ? 0.0 : blocks.front().x_center;
}

double TowerScene::tower_top_y() const {
  double top = 0.0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (static_cast<int>(i) == displaced_index) continue;
    top = std::max(top, blocks[i].y_top());
  }
  return top;
}

TowerScene generate_top_block_scene(std::uint64_t seed, const WorldConfig& cfg,
                                    std::optional<bool> force_label) {
  Rng rng(derive_seed(seed, SeedDomain::GenTop));
  const double w = cfg.block_width;
  const int n_blocks = static_cast<int>(rng.uniform_int(2, 4));
  const auto colors = draw_colors(rng, n_blocks);

  const bool want_stable = force_label ? *force_label : rng.bernoulli(0.5);

  // Integer magnitude in [0.05 W, 1.5 W]; resample until the label matches.
  const auto lo = static_cast<std::int64_t>(std::llround(0.05 * w));
  const auto hi = static_cast<std::int64_t>(std::llround(1.5 * w));
  double magnitude = 0.0;
  for (;;) {
    magnitude = static_cast<double>(rng.uniform_int(lo, hi));
    if (top_offset_stable(magnitude, cfg) == want_stable) break;
  }
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;

  TowerScene scene;
  scene.dataset_kind = DatasetKind::TopBlock;
  scene.seed = seed;
  const double cx = 0.5 * cfg.world_width;
  for (int i = 0; i < n_blocks; ++i) {
    Block b;
    b.width = b.height = w;
    b.y_bottom = static_cast<double>(i) * w;
    b.x_center = (i == n_blocks - 1) ? cx + sign * magnitude : cx;
    b.color = colors[static_cast<std::size_t>(i)];
    scene.blocks.push_back(b);
  }
  scene.displaced_index = n_blocks - 1;
  return scene;
}

TowerScene generate_side_block_scene(std::uint64_t seed, const WorldConfig& cfg) {
  Rng rng(derive_seed(seed, SeedDomain::GenSide));
  const double w = cfg.block_width;
  const int n_tower = static_cast<int>(rng.uniform_int(1, 3));
  const auto colors = draw_colors(rng, n_tower + 1);

  // Integer magnitude in [1.25 W, 2.75 W], capped so the block's outer edge
  // stays inside the world extent (at 2.75 W it would overhang by 10 units).
  const double max_fit = 0.5 * cfg.world_width - 0.5 * w;
  const auto lo = static_cast<std::int64_t>(std::llround(1.25 * w));
  const auto hi = static_cast<std::int64_t>(
      std::llround(std::min(2.75 * w, max_fit)));
  const double magnitude = static_cast<double>(rng.uniform_int(lo, hi));
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;

  TowerScene scene;
  scene.dataset_kind = DatasetKind::SideBlock;
  scene.seed = seed;
  const double cx = 0.5 * cfg.world_width;
  for (int i = 0; i < n_tower; ++i) {
    Block b;
    b.width = b.height = w;
    b.y_bottom = static_cast<double>(i) * w;
    b.x_center = cx;
    b.color = colors[static_cast<std::size_t>(i)];
    scene.blocks.push_back(b);
  }
  Block floor_block;
  floor_block.width = floor_block.height = w;
  floor_block.y_bottom = 0.0;
  floor_block.x_center = cx + sign * magnitude;
  floor_block.color = colors[static_cast<std::size_t>(n_tower)];
  scene.blocks.push_back(floor_block);
  scene.displaced_index = n_tower;
  return scene;
}

bool is_stable(const TowerScene& scene, const WorldConfig& /*cfg*/) {
  const auto n = scene.blocks.size();
  if (n == 0) return true;

  // Resolve each block's supporter: the floor (y_bottom == 0) or the block
  // whose top plane matches its bottom. No candidate plane means the block
  // floats, which a settled scene cannot contain; report unstable.
  std::vector<int> supporter(n, -1);  // -1 floor, -2 none
  for (std::size_t i = 0; i < n; ++i) {
    const Block& b = scene.blocks[i];
    if (std::abs(b.y_bottom) < kHeightEps) {
      supporter[i] = -1;
      continue;
    }
    int best = -2;
    double best_overlap = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Block& s = scene.blocks[j];
      if (std::abs(s.y_top() - b.y_bottom) >= kHeightEps) continue;
      const double overlap = std::min(b.x_right(), s.x_right()) -
                             std::max(b.x_left(), s.x_left());
      if (best == -2 || overlap > best_overlap) {
        best = static_cast<int>(j);
        best_overlap = overlap;
      }
    }
    supporter[i] = best;
    if (best == -2) return false;
  }

  // For every block, gather everything it transitively carries and check the
  // combined center of mass against its top face. Uniform cubes: mass = 1 each.
  for (std::size_t j = 0; j < n; ++j) {
    double mass = 0.0;
    double moment = 0.0;
    // Transitive closure over supporter links.
    std::vector<bool> carried(n, false);
    bool grew = true;
    while (grew) {
      grew = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (carried[i] || supporter[i] < 0) continue;
        const auto s = static_cast<std::size_t>(supporter[i]);
        if (s == j || carried[s]) {
          carried[i] = true;
          grew = true;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!carried[i]) continue;
      mass += 1.0;
      moment += scene.blocks[i].x_center;
    }
    if (mass == 0.0) continue;
    const double com = moment / mass;
    const Block& s = scene.blocks[j];
    if (!(com > s.x_left() && com < s.x_right())) return false;
  }
  return true;
}

TowerScene apply_action(const TowerScene& scene, double dx, double dy) {
  TowerScene out = scene;
  Block& b = out.blocks[static_cast<std::size_t>(out.displaced_index)];
  b.x_center += dx;
  b.y_bottom += dy;
  return out;
}

const char* placement_name(Placement p) {
  switch (p) {
    case Placement::BelowFloor: return "below_floor";
    case Placement::WithinTower: return "within_tower";
    case Placement::StableBigger: return "stable_bigger";
    case Placement::UnstableAbove: return "unstable_above";
  }
  return "?";
}

Placement classify_placement(const TowerScene& scene_after, const WorldConfig& cfg) {
  const Block& moved = scene_after.displaced();
  if (moved.y_bottom < 0.0) return Placement::BelowFloor;

  for (std::size_t i = 0; i < scene_after.blocks.size(); ++i) {
    if (static_cast<int>(i) == scene_after.displaced_index) continue;
    const Block& t = scene_after.blocks[i];
    const double ox = std::min(moved.x_right(), t.x_right()) -
                      std::max(moved.x_left(), t.x_left());
    const double oy = std::min(moved.y_top(), t.y_top()) -
                      std::max(moved.y_bottom, t.y_bottom);
    if (ox > 0.0 && oy > 0.0) return Placement::WithinTower;
  }

  const double top = scene_after.tower_top_y();
  const double cx = scene_after.tower_center_x();
  if (std::abs(moved.y_bottom - top) <= cfg.snap_tolerance &&
      std::abs(moved.x_center - cx) <= cfg.stability_margin * cfg.block_width) {
    return Placement::StableBigger;
  }
  return Placement::UnstableAbove;
}

Action2D optimal_action(const TowerScene& scene, const WorldConfig& /*cfg*/) {
  const Block& moved = scene.displaced();
  Action2D a;
  a.dx = scene.tower_center_x() - moved.x_center;
  a.dy = scene.dataset_kind == DatasetKind::SideBlock
             ? scene.tower_top_y() - moved.y_bottom
             : 0.0;
  return a;
}

double displaced_offset(const TowerScene& scene) {
  return scene.displaced().x_center - scene.tower_center_x();
}

TowerScene mirror_scene(const TowerScene& scene, const WorldConfig& cfg) {
  TowerScene out = scene;
  for (Block& b : out.blocks) b.x_center = cfg.world_width - b.x_center;
  return out;
}

std::string scene_to_jsonl(const TowerScene& scene, const WorldConfig& cfg) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const Block& b : scene.blocks) {
    nlohmann::ordered_json jb;
    jb["x_center"] = b.x_center;
    jb["y_bottom"] = b.y_bottom;
    jb["width"] = b.width;
    jb["height"] = b.height;
    jb["color"] = {b.color[0], b.color[1], b.color[2]};
    blocks.push_back(jb);
  }
  j["blocks"] = blocks;
  j["displaced_index"] = scene.displaced_index;
  j["dataset_kind"] = dataset_name(scene.dataset_kind);
  j["seed"] = scene.seed;
  j["stable"] = is_stable(scene, cfg);
  const Action2D opt = optimal_action(scene, cfg);
  j["optimal_dx"] = opt.dx;
  j["optimal_dy"] = opt.dy;
  return j.dump();
}

TowerScene scene_from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  TowerScene scene;
  for (const auto& jb : j.at("blocks")) {
    Block b;
    b.x_center = jb.at("x_center").get<double>();
    b.y_bottom = jb.at("y_bottom").get<double>();
    b.width = jb.at("width").get<double>();
    b.height = jb.at("height").get<double>();
    const auto& c = jb.at("color");
    b.color = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(),
               c.at(2).get<std::uint8_t>()};
    scene.blocks.push_back(b);
  }
  scene.displaced_index = j.at("displaced_index").get<int>();
  const auto kind = dataset_from_name(j.at("dataset_kind").get<std::string>());
  if (!kind) throw std::runtime_error("scene_from_jsonl: unknown dataset_kind");
  scene.dataset_kind = *kind;
  scene.seed = j.at("seed").get<std::uint64_t>();
  return scene;
}

}  // namespace towerlab
