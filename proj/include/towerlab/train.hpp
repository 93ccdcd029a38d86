#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "towerlab/policy.hpp"
#include "towerlab/render.hpp"
#include "towerlab/tasks.hpp"
#include "towerlab/world.hpp"

namespace towerlab {

enum class Method { GRPO, GSPO, SFT };

const char* method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);

struct ScheduleSegment {
  TaskKind task = TaskKind::BinaryStabilityTop;
  int steps = 0;
};

struct TrainConfig {
  Method method = Method::GRPO;
  // Blocked schedule: segments run sequentially on one parameter set.
  std::vector<ScheduleSegment> schedule;
  // Interleaved: task drawn per step from these weights, for interleave_steps.
  std::vector<std::pair<TaskKind, double>> interleave;
  int interleave_steps = 0;

  int group_size = 16;        // N completions per prompt
  int prompts_per_batch = 4;  // M prompts per step
  double clip_eta = 0.2;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double adv_eps = 1e-6;
  double temperature = 1.0;
  int checkpoint_interval = 500;
  int fixed_dataset = 0;  // 0 = fresh instances; K > 0 = pool of K reused
  std::uint64_t seed = 0;

  PolicyConfig policy;
  WorldConfig world;
  CameraConfig camera;
  RewardConfig reward;

  int total_steps() const;
  // Task trained at a given 0-based step (blocked schedules only).
  TaskKind task_at(int step) const;
};

// Group-normalized advantages: (r - mean) / (population std + eps).
std::vector<double> grpo_advantages(std::span<const double> rewards, double eps);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

// Token-level clipped surrogate, normalized by total token count. Old
// log-probs are the ones recorded in the batch at sampling time; gradient
// descent on the returned loss is gradient ascent on the surrogate. No KL.
LossResult grpo_loss(const CompletionBatch& batch, const PolicyParams& new_params,
                     double eta, double adv_eps);
LossResult grpo_loss_with_advantages(const CompletionBatch& batch,
                                     std::span<const double> advantages,
                                     const PolicyParams& new_params, double eta);

// Sequence-level variant: one length-normalized ratio per completion,
// clipped surrogate averaged over the group.
LossResult gspo_loss(const CompletionBatch& batch, const PolicyParams& new_params,
                     double eta, double adv_eps);
LossResult gspo_loss_with_advantages(const CompletionBatch& batch,
                                     std::span<const double> advantages,
                                     const PolicyParams& new_params, double eta);

// Teacher-forced token cross-entropy on the target sequence, END included.
LossResult sft_loss(const TokenSequence& target, const Image& img, TaskKind task,
                    const PolicyParams& params);

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

// Bias-corrected Adam; throws on non-finite gradient entries.
void adam_step(PolicyParams& params, std::span<const double> grad, AdamState& state,
               double lr, double beta1, double beta2, double eps);

struct TrainLogRow {
  int step = 0;  // 1-based, row written after the update
  std::string task;
  double value = 0.0;      // mean reward (RL) or mean loss (SFT)
  double running25 = 0.0;  // running average, window 25
  std::int64_t sequences_seen = 0;
  std::int64_t tokens_seen = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::string to_csv() const;
  static TrainLog from_csv_file(const std::string& path);
};

// Runs the configured schedule, writing log.csv and checkpoints/ckpt_<step>.bin
// under out_dir. checkpoint 0 is the untrained init; resume picks up from the
// newest checkpoint and reproduces the uninterrupted trajectory exactly.
TrainLog train(const TrainConfig& cfg, const std::string& out_dir,
               bool resume = false);

}  // namespace towerlab
