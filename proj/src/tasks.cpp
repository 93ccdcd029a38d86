#include "towerlab/tasks.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace towerlab {

namespace {

bool in_x_range(long v) { return v >= kXMin && v <= kXMax; }
bool in_y_range(long v) { return v >= kYMin && v <= kYMax; }

// Parses an optional sign plus 1..max_digits digits starting at pos.
// Returns false on malformed input; pos is advanced past the integer.
bool scan_int(const TokenSequence& t, std::size_t& pos, int max_digits, long& out) {
  bool neg = false;
  if (pos < t.size() && t[pos] == kTokMinus) {
    neg = true;
    ++pos;
  }
  int digits = 0;
  long v = 0;
  while (pos < t.size() && t[pos] <= 9) {
    v = v * 10 + t[pos];
    ++digits;
    ++pos;
    if (digits > max_digits) return false;
  }
  if (digits == 0) return false;
  out = neg ? -v : v;
  return true;
}

double gaussian(double d) { return std::exp(-d * d); }

}  // namespace

const char* task_name(TaskKind task) {
  switch (task) {
    case TaskKind::BinaryStabilityTop: return "binary-top";
    case TaskKind::XOnlyTop: return "xonly-top";
    case TaskKind::XOnlySide: return "xonly-side";
    case TaskKind::XYSide: return "xy-side";
  }
  return "?";
}

std::optional<TaskKind> task_from_name(const std::string& name) {
  if (name == "binary-top") return TaskKind::BinaryStabilityTop;
  if (name == "xonly-top") return TaskKind::XOnlyTop;
  if (name == "xonly-side") return TaskKind::XOnlySide;
  if (name == "xy-side") return TaskKind::XYSide;
  return std::nullopt;
}

bool task_is_action(TaskKind task) { return task != TaskKind::BinaryStabilityTop; }

DatasetKind task_dataset(TaskKind task) {
  return (task == TaskKind::BinaryStabilityTop || task == TaskKind::XOnlyTop)
             ? DatasetKind::TopBlock
             : DatasetKind::SideBlock;
}

std::string tokens_to_string(const TokenSequence& tokens) {
  std::string out;
  for (Token t : tokens) {
    if (t <= 9) {
      out.push_back(static_cast<char>('0' + t));
    } else if (t == kTokMinus) {
      out.push_back('-');
    } else if (t == kTokComma) {
      out.push_back(',');
    } else if (t == kTokYes) {
      out.push_back('Y');
    } else if (t == kTokNo) {
      out.push_back('N');
    } else if (t == kTokEnd) {
      out += " END";
    } else {
      out.push_back('?');
    }
  }
  return out;
}

TokenSequence tokens_from_string(const std::string& text) {
  TokenSequence out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c >= '0' && c <= '9') {
      out.push_back(static_cast<Token>(c - '0'));
    } else if (c == '-') {
      out.push_back(kTokMinus);
    } else if (c == ',') {
      out.push_back(kTokComma);
    } else if (c == 'Y') {
      out.push_back(kTokYes);
    } else if (c == 'N') {
      out.push_back(kTokNo);
    } else if (c == 'E') {
      out.push_back(kTokEnd);
      break;  // "END" terminates
    } else if (c == ' ') {
      continue;
    } else {
      throw std::runtime_error("tokens_from_string: bad char");
    }
  }
  return out;
}

TaskInstance make_instance(TaskKind task, std::uint64_t seed, const WorldConfig& cfg) {
  TaskInstance inst;
  inst.task = task;
  inst.scene = task_dataset(task) == DatasetKind::TopBlock
                   ? generate_top_block_scene(seed, cfg)
                   : generate_side_block_scene(seed, cfg);
  inst.optimal = optimal_action(inst.scene, cfg);
  inst.stable = is_stable(inst.scene, cfg);
  return inst;
}

ParsedAction parse_answer(const TokenSequence& tokens, TaskKind task) {
  if (tokens.empty()) return ParsedAction::unparseable();

  if (task == TaskKind::BinaryStabilityTop) {
    if (tokens.size() == 2 && tokens[1] == kTokEnd) {
      if (tokens[0] == kTokYes) return ParsedAction::yes();
      if (tokens[0] == kTokNo) return ParsedAction::no();
    }
    return ParsedAction::unparseable();
  }

  std::size_t pos = 0;
  if (task == TaskKind::XOnlyTop || task == TaskKind::XOnlySide) {
    long dx = 0;
    if (!scan_int(tokens, pos, 3, dx)) return ParsedAction::unparseable();
    if (pos + 1 != tokens.size() || tokens[pos] != kTokEnd) return ParsedAction::unparseable();
    if (!in_x_range(dx)) return ParsedAction::unparseable();
    return ParsedAction::move_x(static_cast<int>(dx));
  }

  long dx = 0, dy = 0;
  if (!scan_int(tokens, pos, 4, dx)) return ParsedAction::unparseable();
  if (pos >= tokens.size() || tokens[pos] != kTokComma) return ParsedAction::unparseable();
  ++pos;
  if (!scan_int(tokens, pos, 4, dy)) return ParsedAction::unparseable();
  if (pos + 1 != tokens.size() || tokens[pos] != kTokEnd) return ParsedAction::unparseable();
  if (!in_x_range(dx) || !in_y_range(dy)) return ParsedAction::unparseable();
  return ParsedAction::move_xy(static_cast<int>(dx), static_cast<int>(dy));
}

double reward(const TaskInstance& instance, const ParsedAction& action,
              const WorldConfig& wcfg, const RewardConfig& rcfg) {
  const TaskKind task = instance.task;

  if (task == TaskKind::BinaryStabilityTop) {
    if (action.kind == ParsedAction::Kind::Yes) return instance.stable ? 1.0 : 0.0;
    if (action.kind == ParsedAction::Kind::No) return instance.stable ? 0.0 : 1.0;
    return -1.0;
  }

  if (task == TaskKind::XOnlyTop || task == TaskKind::XOnlySide) {
    if (action.kind != ParsedAction::Kind::MoveX) return -5.0;
    const TowerScene after = apply_action(instance.scene, action.dx, 0.0);
    const double off = displaced_offset(after);
    const double d = std::abs(off) / rcfg.distance_scale;
    const bool stable =
        task == TaskKind::XOnlyTop
            ? is_stable(after, wcfg)
            : std::abs(off) < wcfg.stability_margin * wcfg.block_width;
    return stable ? 20.0 * gaussian(d) : 2.0 * gaussian(d) - 2.0;
  }

  // XYSide
  if (action.kind != ParsedAction::Kind::MoveXY) return -5.0;
  const TowerScene after = apply_action(instance.scene, action.dx, action.dy);
  const Placement placement = classify_placement(after, wcfg);
  if (placement == Placement::BelowFloor) return -4.0;

  // Euclidean distance from the moved block's bottom-center to the optimal
  // position on the tower top.
  const Block& moved = after.displaced();
  const double tx = after.tower_center_x();
  const double ty = after.tower_top_y();
  const double ddx = moved.x_center - tx;
  const double ddy = moved.y_bottom - ty;
  const double d = std::sqrt(ddx * ddx + ddy * ddy) / rcfg.distance_scale;
  switch (placement) {
    case Placement::WithinTower: return 2.0 * gaussian(d) - 4.0;
    case Placement::StableBigger: return 20.0 * gaussian(d);
    default: return 2.0 * gaussian(d) - 2.0;
  }
}

ParsedAction random_legal_action(TaskKind task, Rng& rng) {
  switch (task) {
    case TaskKind::BinaryStabilityTop:
      return rng.bernoulli(0.5) ? ParsedAction::yes() : ParsedAction::no();
    case TaskKind::XOnlyTop:
    case TaskKind::XOnlySide:
      return ParsedAction::move_x(static_cast<int>(rng.uniform_int(kXMin, kXMax)));
    case TaskKind::XYSide:
      return ParsedAction::move_xy(static_cast<int>(rng.uniform_int(kXMin, kXMax)),
                                   static_cast<int>(rng.uniform_int(kYMin, kYMax)));
  }
  return ParsedAction::unparseable();
}

BaselineEstimate baseline_reward(TaskKind task, const WorldConfig& wcfg,
                                 const RewardConfig& rcfg, int n_samples,
                                 std::uint64_t seed) {
  Rng rng(derive_seed(seed, SeedDomain::Baseline, static_cast<std::uint64_t>(task)));
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const std::uint64_t s =
        derive_seed(seed, SeedDomain::Baseline, static_cast<std::uint64_t>(task),
                    static_cast<std::uint64_t>(i) + 1);
    const TaskInstance inst = make_instance(task, s, wcfg);
    const double r = reward(inst, random_legal_action(task, rng), wcfg, rcfg);
    sum += r;
    sum_sq += r * r;
  }
  BaselineEstimate est;
  est.n = n_samples;
  est.mean = sum / n_samples;
  const double var = std::max(0.0, sum_sq / n_samples - est.mean * est.mean);
  est.std_error = std::sqrt(var / n_samples);
  est.ci_low = est.mean - 1.96 * est.std_error;
  est.ci_high = est.mean + 1.96 * est.std_error;
  return est;
}

namespace {

void append_int(TokenSequence& out, long v) {
  if (v < 0) {
    out.push_back(kTokMinus);
    v = -v;
  }
  std::string digits = std::to_string(v);
  for (char c : digits) out.push_back(static_cast<Token>(c - '0'));
}

}  // namespace

TokenSequence sft_target(const TaskInstance& instance) {
  TokenSequence out;
  switch (instance.task) {
    case TaskKind::BinaryStabilityTop:
      out.push_back(instance.stable ? kTokYes : kTokNo);
      break;
    case TaskKind::XOnlyTop:
    case TaskKind::XOnlySide:
      append_int(out, std::lround(instance.optimal.dx));
      break;
    case TaskKind::XYSide:
      append_int(out, std::lround(instance.optimal.dx));
      out.push_back(kTokComma);
      append_int(out, std::lround(instance.optimal.dy));
      break;
  }
  out.push_back(kTokEnd);
  return out;
}

TokenSequence oracle_answer_tokens(const TaskInstance& instance) {
  return sft_target(instance);
}

std::string reward_grid_csv(const TaskInstance& instance, const WorldConfig& wcfg,
                            const RewardConfig& rcfg, int stride) {
  std::ostringstream out;
  out.precision(12);
  if (instance.task == TaskKind::XYSide) {
    out << "dy\\dx";
    for (int dx = kXMin; dx <= kXMax; dx += stride) out << "," << dx;
    out << "\n";
    for (int dy = kYMin; dy <= kYMax; dy += stride) {
      out << dy;
      for (int dx = kXMin; dx <= kXMax; dx += stride) {
        out << "," << reward(instance, ParsedAction::move_xy(dx, dy), wcfg, rcfg);
      }
      out << "\n";
    }
  } else {
    out << "dx,reward\n";
    for (int dx = kXMin; dx <= kXMax; dx += stride) {
      out << dx << ","
          << reward(instance, ParsedAction::move_x(dx), wcfg, rcfg) << "\n";
    }
  }
  return out.str();
}

}  // namespace towerlab
