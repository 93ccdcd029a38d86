#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace towerlab {

struct WorldConfig {
  double block_width = 200.0;   // cube side, world units
  double world_width = 1280.0;
  double world_height = 1280.0;
  double stability_margin = 0.5;  // fraction of block_width
  double snap_tolerance = 10.0;   // world units, "resting on top" slack
};

struct Block {
  double x_center = 0.0;
  double y_bottom = 0.0;
  double width = 0.0;   // == height, cubes only
  double height = 0.0;
  std::array<std::uint8_t, 3> color{0, 0, 0};

  double x_left() const { return x_center - 0.5 * width; }
  double x_right() const { return x_center + 0.5 * width; }
  double y_top() const { return y_bottom + height; }
};

enum class DatasetKind { TopBlock, SideBlock };

const char* dataset_name(DatasetKind kind);
std::optional<DatasetKind> dataset_from_name(const std::string& name);

// World state of one scene. Blocks are ordered bottom-to-top along the tower,
// with the single displaced block last.
struct TowerScene {
  std::vector<Block> blocks;
  int displaced_index = -1;
  DatasetKind dataset_kind = DatasetKind::TopBlock;
  std::uint64_t seed = 0;

  const Block& displaced() const { return blocks[static_cast<std::size_t>(displaced_index)]; }
  // x-center shared by all perfectly stacked tower blocks.
  double tower_center_x() const;
  // Top plane of the tower excluding the displaced block.
  double tower_top_y() const;
};

// Both generators draw displacement magnitudes as integer world units, so the
// integer action space can exactly cancel the displacement (d = 0 reachable).
TowerScene generate_top_block_scene(std::uint64_t seed, const WorldConfig& cfg,
                                    std::optional<bool> force_label = std::nullopt);
TowerScene generate_side_block_scene(std::uint64_t seed, const WorldConfig& cfg);

// Quasi-static criterion: at every support interface the center of mass of
// everything above must lie strictly inside the supporting face; a COM exactly
// on the edge counts as unstable. Floor-supported blocks are always held.
bool is_stable(const TowerScene& scene, const WorldConfig& cfg);

// One-step environment: translate the displaced block, no settling, no clamping.
TowerScene apply_action(const TowerScene& scene, double dx, double dy);

enum class Placement { BelowFloor, WithinTower, StableBigger, UnstableAbove };

const char* placement_name(Placement p);

// Classification of a moved side block, evaluated in exactly this order:
// below floor, overlapping the tower, resting stably on top, anything else.
Placement classify_placement(const TowerScene& scene_after, const WorldConfig& cfg);

struct Action2D {
  double dx = 0.0;
  double dy = 0.0;
};

// Geometric optimum: move the displaced block to the tower's center column
// (top block) or to the centered position on the tower top plane (side block).
Action2D optimal_action(const TowerScene& scene, const WorldConfig& cfg);

// Signed x-offset of the displaced block from the tower center.
double displaced_offset(const TowerScene& scene);

// Mirror about the vertical world center line; used by symmetry checks.
TowerScene mirror_scene(const TowerScene& scene, const WorldConfig& cfg);

// One JSON object per line, fixed field order:
// blocks, displaced_index, dataset_kind, seed, stable, optimal_dx, optimal_dy.
std::string scene_to_jsonl(const TowerScene& scene, const WorldConfig& cfg);
TowerScene scene_from_jsonl(const std::string& line);

}  // namespace towerlab
