#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "towerlab/policy.hpp"
#include "towerlab/tasks.hpp"

namespace towerlab {

enum class AnswerSource { Model, Oracle, RandomLegal };

struct EvalResult {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double legal_rate = 0.0;
  int n = 0;
  int n_legal = 0;
};

// Greedy decoding on held-out instances (eval-domain seeds, disjoint from
// training by construction). legal_only restricts the mean to parseable
// answers; oracle/random sources replace the policy for ceiling/baseline runs.
EvalResult evaluate(const PolicyParams& params, TaskKind task, int n,
                    std::uint64_t seed, const WorldConfig& wcfg,
                    const CameraConfig& cam, const RewardConfig& rcfg,
                    bool legal_only = false,
                    AnswerSource source = AnswerSource::Model, int workers = 1);

struct MatrixCell {
  std::string method;
  std::string trained_on;
  std::string evaluated_on;
  int step = 0;
  bool present = false;
  EvalResult result;
};

struct EvalMatrix {
  std::vector<MatrixCell> cells;
  std::string to_csv() const;  // schema matrix-v1
};

struct RunSeries {
  std::string method;
  std::string trained_on;
  std::string dir;
  std::vector<std::pair<int, std::string>> checkpoints;  // (step, path) sorted
};

// Scans dir/checkpoints for ckpt_<step>.bin files.
RunSeries discover_run(const std::string& dir, const std::string& method,
                       const std::string& trained_on);

EvalMatrix generalization_matrix(const std::vector<RunSeries>& runs,
                                 const std::vector<TaskKind>& tasks,
                                 const PolicyConfig& pcfg, int n_instances,
                                 std::uint64_t seed, const WorldConfig& wcfg,
                                 const CameraConfig& cam, const RewardConfig& rcfg,
                                 int workers = 1);

struct ExternalEvalResult {
  double mean = 0.0;  // binary reward: 1 correct, 0 wrong, -1 illegal
  double ci_low = 0.0;
  double ci_high = 0.0;
  double legal_rate = 0.0;
  int n = 0;
};

// Real-image binary stability evaluation: a directory of PNGs plus a CSV of
// "filename,stable" rows. Unreadable images or missing labels are hard errors.
ExternalEvalResult external_binary_eval(const PolicyParams& params,
                                        const std::string& image_dir,
                                        const std::string& labels_csv,
                                        const CameraConfig& cam);

enum class ProbeTarget { BinaryStability, XOffset };
const char* probe_target_name(ProbeTarget t);

enum class ProbeFeatures {
  EncoderLayer,   // activations of one encoder layer
  CenterRowPixels  // raw RGB of the row through the displaced block's center
};

struct ProbeResult {
  std::string model_tag;
  ProbeTarget target = ProbeTarget::BinaryStability;
  ProbeFeatures features = ProbeFeatures::EncoderLayer;
  int layer = -1;  // -1 for pixel controls
  bool shuffled = false;
  std::vector<double> fold_metrics;  // accuracy or R^2 per fold
  double mean_metric = 0.0;
};

struct ProbeOptions {
  int n_images = 600;
  int folds = 10;
  std::uint64_t seed = 0;
  double lambda = 1.0;
  bool shuffle_labels = false;
  std::string model_tag = "model";
};

// Linear decodability probe on the top-block dataset: L2 logistic regression
// for stability, ridge for the signed x-offset, 10-fold stratified CV.
ProbeResult probe(const PolicyParams& params, ProbeTarget target,
                  ProbeFeatures features, int layer, const ProbeOptions& opt,
                  const WorldConfig& wcfg, const CameraConfig& cam);

std::vector<ProbeResult> probe_all_layers(const PolicyParams& params,
                                          ProbeTarget target,
                                          const ProbeOptions& opt,
                                          const WorldConfig& wcfg,
                                          const CameraConfig& cam);

std::string probes_to_csv(const std::vector<ProbeResult>& probes);

}  // namespace towerlab
