// Independent test oracles. Everything here recomputes results from scratch,
// sharing no logic with the library implementations it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "towerlab/tasks.hpp"
#include "towerlab/world.hpp"

namespace oracle {

// Brute-force discrete settling check: repeatedly look for any block whose
// carried center of mass falls on or outside its support edge, or that has
// nothing under it; any such motion means the scene is unstable.
inline bool settles_stable(const towerlab::TowerScene& scene) {
  struct Box {
    double xl, xr, yb, yt;
  };
  std::vector<Box> boxes;
  for (const auto& b : scene.blocks) {
    boxes.push_back({b.x_left(), b.x_right(), b.y_bottom, b.y_top()});
  }
  const std::size_t n = boxes.size();
  const double eps = 1e-7;

  // rests_on[i] = j if block i sits on block j's top plane, -1 if on floor.
  std::vector<int> rests_on(n, -2);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(boxes[i].yb) < eps) {
      rests_on[i] = -1;
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (std::abs(boxes[i].yb - boxes[j].yt) < eps) {
        rests_on[i] = static_cast<int>(j);
        break;
      }
    }
    if (rests_on[i] == -2) return false;  // floating block: it would fall
  }

  // For every supporting block, gather all blocks transitively above it and
  // topple if their combined COM is at or beyond the support face edge.
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<bool> above(n, false);
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (above[i] || rests_on[i] < 0) continue;
        const auto r = static_cast<std::size_t>(rests_on[i]);
        if (r == j || above[r]) {
          above[i] = changed = true;
        }
      }
    }
    double com = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!above[i]) continue;
      com += 0.5 * (boxes[i].xl + boxes[i].xr);
      ++count;
    }
    if (count == 0) continue;
    com /= count;
    // Tie (com exactly on the edge) topples.
    if (com <= boxes[j].xl || com >= boxes[j].xr) return false;
  }
  return true;
}

// Axis-aligned rectangle overlap with positive measure.
inline bool rects_overlap(double xl1, double xr1, double yb1, double yt1,
                          double xl2, double xr2, double yb2, double yt2) {
  const double w = std::min(xr1, xr2) - std::max(xl1, xl2);
  const double h = std::min(yt1, yt2) - std::max(yb1, yb2);
  return w > 0.0 && h > 0.0;
}

// Independent reward evaluator, coded directly from the task formulas with
// its own geometry. Takes the raw parsed action (or unparseable flag).
inline double reward_formula(const towerlab::TaskInstance& inst,
                             const towerlab::ParsedAction& action,
                             const towerlab::WorldConfig& wcfg,
                             const towerlab::RewardConfig& rcfg) {
  using towerlab::ParsedAction;
  using towerlab::TaskKind;

  const auto& scene = inst.scene;
  const auto& moved = scene.blocks[static_cast<std::size_t>(scene.displaced_index)];

  double tower_cx = 0.0;
  double tower_top = 0.0;
  for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
    if (static_cast<int>(i) == scene.displaced_index) continue;
    tower_cx = scene.blocks[i].x_center;
    tower_top = std::max(tower_top, scene.blocks[i].y_bottom + scene.blocks[i].height);
  }

  if (inst.task == TaskKind::BinaryStabilityTop) {
    if (action.kind == ParsedAction::Kind::Yes) return inst.stable ? 1.0 : 0.0;
    if (action.kind == ParsedAction::Kind::No) return inst.stable ? 0.0 : 1.0;
    return -1.0;
  }

  if (inst.task == TaskKind::XOnlyTop || inst.task == TaskKind::XOnlySide) {
    if (action.kind != ParsedAction::Kind::MoveX) return -5.0;
    const double final_cx = moved.x_center + action.dx;
    const double off = final_cx - tower_cx;
    const double d = std::abs(off) / rcfg.distance_scale;
    const bool stable = std::abs(off) < wcfg.stability_margin * wcfg.block_width;
    return stable ? 20.0 * std::exp(-d * d) : 2.0 * std::exp(-d * d) - 2.0;
  }

  // XYSide
  if (action.kind != ParsedAction::Kind::MoveXY) return -5.0;
  const double cx = moved.x_center + action.dx;
  const double yb = moved.y_bottom + action.dy;
  const double half = 0.5 * moved.width;
  if (yb < 0.0) return -4.0;

  bool within = false;
  for (std::size_t i = 0; i < scene.blocks.size(); ++i) {
    if (static_cast<int>(i) == scene.displaced_index) continue;
    const auto& t = scene.blocks[i];
    if (rects_overlap(cx - half, cx + half, yb, yb + moved.height, t.x_left(),
                      t.x_right(), t.y_bottom, t.y_top())) {
      within = true;
      break;
    }
  }
  const double ex = cx - tower_cx;
  const double ey = yb - tower_top;
  const double d = std::sqrt(ex * ex + ey * ey) / rcfg.distance_scale;
  const double g = std::exp(-d * d);
  if (within) return 2.0 * g - 4.0;
  const bool snapped = std::abs(yb - tower_top) <= wcfg.snap_tolerance &&
                       std::abs(ex) <= wcfg.stability_margin * wcfg.block_width;
  if (snapped) return 20.0 * g;
  return 2.0 * g - 2.0;
}

// Central finite difference of f along coordinate i of params vector.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> w, std::size_t i, double h) {
  const double orig = w[i];
  w[i] = orig + h;
  const double fp = f(w);
  w[i] = orig - h;
  const double fm = f(w);
  return (fp - fm) / (2.0 * h);
}

}  // namespace oracle
