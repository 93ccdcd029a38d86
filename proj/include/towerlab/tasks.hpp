#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "towerlab/rng.hpp"
#include "towerlab/world.hpp"

namespace towerlab {

enum class TaskKind { BinaryStabilityTop, XOnlyTop, XOnlySide, XYSide };

constexpr int kNumTasks = 4;
const char* task_name(TaskKind task);
std::optional<TaskKind> task_from_name(const std::string& name);
bool task_is_action(TaskKind task);
DatasetKind task_dataset(TaskKind task);

// Answer vocabulary: digits 0-9, then '-', ',', 'Y', 'N', END.
using Token = std::uint8_t;
using TokenSequence = std::vector<Token>;

constexpr Token kTokMinus = 10;
constexpr Token kTokComma = 11;
constexpr Token kTokYes = 12;
constexpr Token kTokNo = 13;
constexpr Token kTokEnd = 14;
constexpr int kVocabSize = 15;

// Action ranges stated by the task prompts.
constexpr int kXMin = -600;
constexpr int kXMax = 600;
constexpr int kYMin = 0;
constexpr int kYMax = 1000;

std::string tokens_to_string(const TokenSequence& tokens);
TokenSequence tokens_from_string(const std::string& text);

struct ParsedAction {
  enum class Kind { Yes, No, MoveX, MoveXY, Unparseable };
  Kind kind = Kind::Unparseable;
  int dx = 0;
  int dy = 0;

  static ParsedAction yes() { return {Kind::Yes, 0, 0}; }
  static ParsedAction no() { return {Kind::No, 0, 0}; }
  static ParsedAction move_x(int dx) { return {Kind::MoveX, dx, 0}; }
  static ParsedAction move_xy(int dx, int dy) { return {Kind::MoveXY, dx, dy}; }
  static ParsedAction unparseable() { return {}; }
  bool legal() const { return kind != Kind::Unparseable; }
};

struct RewardConfig {
  double distance_scale = 200.0;  // world units per unit of d (one block width)
};

struct TaskInstance {
  TowerScene scene;
  TaskKind task = TaskKind::BinaryStabilityTop;
  Action2D optimal;
  bool stable = false;
};

TaskInstance make_instance(TaskKind task, std::uint64_t seed, const WorldConfig& cfg);

// Strict grammar; anything else, including out-of-range integers, is
// Unparseable. Never throws.
ParsedAction parse_answer(const TokenSequence& tokens, TaskKind task);

// Exact reward functions. Branch values: binary -1/0/1; action tasks -5 for
// unparseable, -4 below floor, 2e^(-d^2)-4 within tower, 20e^(-d^2) stable,
// 2e^(-d^2)-2 otherwise.
double reward(const TaskInstance& instance, const ParsedAction& action,
              const WorldConfig& wcfg, const RewardConfig& rcfg);

// Uniformly random legal action for the task; the baseline policy.
ParsedAction random_legal_action(TaskKind task, Rng& rng);

struct BaselineEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n = 0;
};

// Monte-Carlo mean reward of uniformly random legal actions on fresh instances.
BaselineEstimate baseline_reward(TaskKind task, const WorldConfig& wcfg,
                                 const RewardConfig& rcfg, int n_samples,
                                 std::uint64_t seed);

// Canonical token rendering of the oracle answer; parses back legally and
// earns the maximal reward for the instance.
TokenSequence sft_target(const TaskInstance& instance);
TokenSequence oracle_answer_tokens(const TaskInstance& instance);

// CSV grid of reward values over the integer action range, for auditing the
// reward surfaces. x-only: one row per dx. x-y: rows dy, columns dx.
std::string reward_grid_csv(const TaskInstance& instance, const WorldConfig& wcfg,
                            const RewardConfig& rcfg, int stride);

}  // namespace towerlab
