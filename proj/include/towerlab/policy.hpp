#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "towerlab/render.hpp"
#include "towerlab/tasks.hpp"

namespace towerlab {

// Feedforward encoder (patch embedding + two hidden layers) and feedforward
// autoregressive decoder over the 15-token answer vocabulary. All math in
// double precision, tanh nonlinearities throughout.
struct PolicyConfig {
  int pooled_hw = 32;     // image average-pooled to pooled_hw x pooled_hw
  int patch_cells = 8;    // patch side length, in pooled cells
  int patch_emb = 32;
  int enc_hidden = 128;
  int feature_dim = 128;
  int task_emb_dim = 16;
  int tok_emb_dim = 24;
  int pos_emb_dim = 12;
  int dec_hidden = 128;
  int max_len = 10;       // raised for the long-generation variant

  int pooled_dim() const { return pooled_hw * pooled_hw * 3; }
  int patch_dim() const { return patch_cells * patch_cells * 3; }
  int patches_per_side() const { return pooled_hw / patch_cells; }
  int n_patches() const { return patches_per_side() * patches_per_side(); }
  int enc_concat() const { return n_patches() * patch_emb; }
  std::uint64_t arch_hash() const;
};

constexpr int kPhaseDim = 8;
constexpr int kTaskDescDim = 4;
constexpr Token kTokBos = 15;  // embedding-table row for "no previous token"

struct PolicyParams {
  PolicyConfig cfg;
  std::vector<double> w;

  static PolicyParams init(const PolicyConfig& cfg, std::uint64_t seed);
  std::size_t size() const { return w.size(); }
};

// Flat offsets of every tensor inside PolicyParams::w.
struct ParamLayout {
  std::size_t enc_patch_w, enc_patch_b;
  std::size_t enc_h1_w, enc_h1_b;
  std::size_t enc_h2_w, enc_h2_b;
  std::size_t task_emb, tok_emb, pos_emb;
  std::size_t dec_h1_w, dec_h1_b;
  std::size_t dec_h2_w, dec_h2_b;
  std::size_t out_w, out_b;
  std::size_t total;
  int dec_in;  // decoder step input width
  int out_in;  // output layer input width
};
ParamLayout make_layout(const PolicyConfig& cfg);

// Per-layer post-nonlinearity activations of one encoder pass; layer 0 is the
// pooled, normalized input, then patch embeddings, hidden, features.
struct ActivationTrace {
  std::vector<std::vector<double>> layers;
};
constexpr int kEncoderLayers = 4;
const char* encoder_layer_name(int layer);

struct EncodeCache {
  std::vector<double> pooled;     // normalized pooled input
  std::vector<double> patch_act;  // tanh patch embeddings, concatenated
  std::vector<double> h1_act;
  std::vector<double> features;   // tanh output, fed to the decoder
};

EncodeCache encode_forward(const PolicyParams& params, const Image& img);
// Accumulates into grad (size layout.total); dfeatures is the loss gradient
// at the feature output.
void encode_backward(const PolicyParams& params, const EncodeCache& cache,
                     std::span<const double> dfeatures, std::vector<double>& grad);

struct EncodeResult {
  std::vector<double> features;
  ActivationTrace trace;
};
EncodeResult encode(const Image& img, const PolicyParams& params);

// Grammar-phase state derived from (task, emitted prefix); exposed to the
// decoder as fixed input features. A deterministic function of inputs the
// decoder already conditions on.
struct PhaseState {
  bool started = false;
  bool malformed = false;
  bool binary_answered = false;
  bool in_int = false;
  int cur_digits = 0;
  int cur_int_index = 0;

  void feed(Token tok, TaskKind task);
  void features(double out[kPhaseDim], TaskKind task) const;
};

void task_descriptor(TaskKind task, double out[kTaskDescDim]);

struct DecoderStep {
  std::vector<double> x;       // assembled input
  std::vector<double> h1, h2;  // post-tanh
  std::vector<double> logp;    // log softmax at temperature 1
  Token token = 0;             // token evaluated at this step
};

struct DecoderRun {
  std::vector<DecoderStep> steps;
  double logprob = 0.0;  // sum of chosen-token log-probs, temperature 1
};

// Teacher-forced forward over a whole token sequence.
DecoderRun decoder_forward(const PolicyParams& params,
                           std::span<const double> features, TaskKind task,
                           const TokenSequence& tokens);

// Backward of sum_t weight[t] * logp_t(token_t). Accumulates parameter
// gradients into grad and the feature gradient into dfeatures.
void decoder_backward(const PolicyParams& params, TaskKind task,
                      const DecoderRun& run, std::span<const double> weights,
                      std::vector<double>& grad, std::vector<double>& dfeatures);

struct Completion {
  TokenSequence tokens;
  std::vector<double> logps;        // per token, under the sampling distribution
  std::vector<double> logps_model;  // per token, at temperature 1
  double reward = 0.0;
};

struct CompletionBatch {
  Image image;
  TaskKind task = TaskKind::BinaryStabilityTop;
  std::vector<Completion> completions;
};

// N i.i.d. autoregressive samples at the given temperature; sequences stop at
// END or max_len. Reproducible from seed.
CompletionBatch sample_completions(const Image& img, TaskKind task,
                                   const PolicyParams& params, int n,
                                   double temperature, std::uint64_t seed);

TokenSequence greedy_decode(const Image& img, TaskKind task,
                            const PolicyParams& params);

double sequence_logprob(const TokenSequence& tokens, const Image& img,
                        TaskKind task, const PolicyParams& params);

struct GradResult {
  double logprob = 0.0;
  std::vector<double> grad;
};
GradResult logprob_and_grad(const TokenSequence& tokens, const Image& img,
                            TaskKind task, const PolicyParams& params);

// Versioned checkpoint blob: architecture hash, flat parameters, optimizer
// moments, step counters. Loading refuses a mismatched architecture.
struct Checkpoint {
  PolicyParams params;
  std::vector<double> adam_m, adam_v;
  std::int64_t adam_t = 0;
  std::int64_t global_step = 0;
};
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path, const PolicyConfig& cfg);

}  // namespace towerlab
