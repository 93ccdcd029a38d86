#include "towerlab/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "towerlab/rng.hpp"

namespace towerlab {

namespace {

void matvec(std::span<const double> w, std::size_t off, int rows, int cols,
            std::span<const double> x, std::span<const double> b, std::size_t boff,
            double* out) {
  for (int r = 0; r < rows; ++r) {
    const double* row = w.data() + off + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    double acc = b.empty() ? 0.0 : b[boff + static_cast<std::size_t>(r)];
    for (int c = 0; c < cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    out[r] = acc;
  }
}

// Backward through y = W x + b given dy: accumulates dW, db, and dx.
void matvec_backward(std::span<const double> w, std::size_t woff, int rows, int cols,
                     std::span<const double> x, std::span<const double> dy,
                     std::vector<double>& grad, std::size_t gboff, double* dx) {
  for (int r = 0; r < rows; ++r) {
    const double d = dy[static_cast<std::size_t>(r)];
    if (d == 0.0) continue;
    const std::size_t row = woff + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    double* grow = grad.data() + row;
    const double* wrow = w.data() + row;
    for (int c = 0; c < cols; ++c) {
      grow[c] += d * x[static_cast<std::size_t>(c)];
      if (dx != nullptr) dx[c] += d * wrow[c];
    }
    if (gboff != static_cast<std::size_t>(-1)) grad[gboff + static_cast<std::size_t>(r)] += d;
  }
}

void tanh_inplace(double* v, int n) {
  for (int i = 0; i < n; ++i) v[i] = std::tanh(v[i]);
}

// dpre = dact * (1 - act^2), in place on dact.
void tanh_backward(const double* act, double* dact, int n) {
  for (int i = 0; i < n; ++i) dact[i] *= 1.0 - act[i] * act[i];
}

void log_softmax(const double* logits, int n, double* out) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  const double lse = mx + std::log(sum);
  for (int i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

struct Slots {
  int feat, task_emb, desc, prev, sum, pos, phase;
};

Slots input_slots(const PolicyConfig& cfg) {
  Slots s{};
  s.feat = 0;
  s.task_emb = s.feat + cfg.feature_dim;
  s.desc = s.task_emb + cfg.task_emb_dim;
  s.prev = s.desc + kTaskDescDim;
  s.sum = s.prev + cfg.tok_emb_dim;
  s.pos = s.sum + cfg.tok_emb_dim;
  s.phase = s.pos + cfg.pos_emb_dim;
  return s;
}

}  // namespace

std::uint64_t PolicyConfig::arch_hash() const {
  const std::string desc =
      "pooled=" + std::to_string(pooled_hw) + ";patch=" + std::to_string(patch_cells) +
      ";pe=" + std::to_string(patch_emb) + ";eh=" + std::to_string(enc_hidden) +
      ";fd=" + std::to_string(feature_dim) + ";te=" + std::to_string(task_emb_dim) +
      ";ke=" + std::to_string(tok_emb_dim) + ";po=" + std::to_string(pos_emb_dim) +
      ";dh=" + std::to_string(dec_hidden) + ";ml=" + std::to_string(max_len) +
      ";vocab=" + std::to_string(kVocabSize) + ";phase=" + std::to_string(kPhaseDim);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : desc) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

ParamLayout make_layout(const PolicyConfig& cfg) {
  ParamLayout l{};
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  const auto pd = static_cast<std::size_t>(cfg.patch_dim());
  l.enc_patch_w = take(static_cast<std::size_t>(cfg.patch_emb) * pd);
  l.enc_patch_b = take(static_cast<std::size_t>(cfg.patch_emb));
  l.enc_h1_w = take(static_cast<std::size_t>(cfg.enc_hidden) * static_cast<std::size_t>(cfg.enc_concat()));
  l.enc_h1_b = take(static_cast<std::size_t>(cfg.enc_hidden));
  l.enc_h2_w = take(static_cast<std::size_t>(cfg.feature_dim) * static_cast<std::size_t>(cfg.enc_hidden));
  l.enc_h2_b = take(static_cast<std::size_t>(cfg.feature_dim));
  l.task_emb = take(static_cast<std::size_t>(kNumTasks) * static_cast<std::size_t>(cfg.task_emb_dim));
  l.tok_emb = take(static_cast<std::size_t>(kVocabSize + 1) * static_cast<std::size_t>(cfg.tok_emb_dim));
  l.pos_emb = take(static_cast<std::size_t>(cfg.max_len) * static_cast<std::size_t>(cfg.pos_emb_dim));
  l.dec_in = cfg.feature_dim + cfg.task_emb_dim + kTaskDescDim + 2 * cfg.tok_emb_dim +
             cfg.pos_emb_dim + kPhaseDim;
  l.out_in = cfg.dec_hidden + kPhaseDim + kTaskDescDim;
  l.dec_h1_w = take(static_cast<std::size_t>(cfg.dec_hidden) * static_cast<std::size_t>(l.dec_in));
  l.dec_h1_b = take(static_cast<std::size_t>(cfg.dec_hidden));
  l.dec_h2_w = take(static_cast<std::size_t>(cfg.dec_hidden) * static_cast<std::size_t>(cfg.dec_hidden));
  l.dec_h2_b = take(static_cast<std::size_t>(cfg.dec_hidden));
  l.out_w = take(static_cast<std::size_t>(kVocabSize) * static_cast<std::size_t>(l.out_in));
  l.out_b = take(static_cast<std::size_t>(kVocabSize));
  l.total = off;
  return l;
}

PolicyParams PolicyParams::init(const PolicyConfig& cfg, std::uint64_t seed) {
  const ParamLayout l = make_layout(cfg);
  PolicyParams p;
  p.cfg = cfg;
  p.w.assign(l.total, 0.0);
  Rng rng(derive_seed(seed, SeedDomain::ParamInit));

  auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) p.w[off + i] = rng.normal(0.0, std_dev);
  };
  fill(l.enc_patch_w, static_cast<std::size_t>(cfg.patch_emb) * static_cast<std::size_t>(cfg.patch_dim()), cfg.patch_dim());
  fill(l.enc_h1_w, static_cast<std::size_t>(cfg.enc_hidden) * static_cast<std::size_t>(cfg.enc_concat()), cfg.enc_concat());
  fill(l.enc_h2_w, static_cast<std::size_t>(cfg.feature_dim) * static_cast<std::size_t>(cfg.enc_hidden), cfg.enc_hidden);
  fill(l.task_emb, static_cast<std::size_t>(kNumTasks) * static_cast<std::size_t>(cfg.task_emb_dim), cfg.task_emb_dim);
  fill(l.tok_emb, static_cast<std::size_t>(kVocabSize + 1) * static_cast<std::size_t>(cfg.tok_emb_dim), cfg.tok_emb_dim);
  fill(l.pos_emb, static_cast<std::size_t>(cfg.max_len) * static_cast<std::size_t>(cfg.pos_emb_dim), cfg.pos_emb_dim);
  fill(l.dec_h1_w, static_cast<std::size_t>(cfg.dec_hidden) * static_cast<std::size_t>(l.dec_in), l.dec_in);
  fill(l.dec_h2_w, static_cast<std::size_t>(cfg.dec_hidden) * static_cast<std::size_t>(cfg.dec_hidden), cfg.dec_hidden);
  fill(l.out_w, static_cast<std::size_t>(kVocabSize) * static_cast<std::size_t>(l.out_in), l.out_in);
  return p;
}

const char* encoder_layer_name(int layer) {
  switch (layer) {
    case 0: return "pooled_input";
    case 1: return "patch_embed";
    case 2: return "enc_hidden";
    case 3: return "features";
  }
  return "?";
}

EncodeCache encode_forward(const PolicyParams& params, const Image& img) {
  const PolicyConfig& cfg = params.cfg;
  const ParamLayout l = make_layout(cfg);
  if (img.width % cfg.pooled_hw != 0 || img.height % cfg.pooled_hw != 0) {
    throw std::runtime_error("encode: image size not divisible by pooled grid");
  }
  const int fx = img.width / cfg.pooled_hw;
  const int fy = img.height / cfg.pooled_hw;

  EncodeCache cache;
  cache.pooled.assign(static_cast<std::size_t>(cfg.pooled_dim()), 0.0);
  for (int cy = 0; cy < cfg.pooled_hw; ++cy) {
    for (int cx = 0; cx < cfg.pooled_hw; ++cx) {
      double acc[3] = {0, 0, 0};
      for (int y = cy * fy; y < (cy + 1) * fy; ++y) {
        for (int x = cx * fx; x < (cx + 1) * fx; ++x) {
          const std::uint8_t* p = img.at(x, y);
          acc[0] += p[0];
          acc[1] += p[1];
          acc[2] += p[2];
        }
      }
      const double inv = 1.0 / (255.0 * fx * fy);
      const std::size_t base =
          3 * (static_cast<std::size_t>(cy) * static_cast<std::size_t>(cfg.pooled_hw) + static_cast<std::size_t>(cx));
      cache.pooled[base] = acc[0] * inv - 0.5;
      cache.pooled[base + 1] = acc[1] * inv - 0.5;
      cache.pooled[base + 2] = acc[2] * inv - 0.5;
    }
  }

  // Shared patch projection; patch identity preserved by concatenation order.
  const int pside = cfg.patches_per_side();
  cache.patch_act.assign(static_cast<std::size_t>(cfg.enc_concat()), 0.0);
  std::vector<double> patch(static_cast<std::size_t>(cfg.patch_dim()));
  for (int py = 0; py < pside; ++py) {
    for (int px = 0; px < pside; ++px) {
      std::size_t k = 0;
      for (int cy = py * cfg.patch_cells; cy < (py + 1) * cfg.patch_cells; ++cy) {
        for (int cx = px * cfg.patch_cells; cx < (px + 1) * cfg.patch_cells; ++cx) {
          const std::size_t base =
              3 * (static_cast<std::size_t>(cy) * static_cast<std::size_t>(cfg.pooled_hw) + static_cast<std::size_t>(cx));
          patch[k++] = cache.pooled[base];
          patch[k++] = cache.pooled[base + 1];
          patch[k++] = cache.pooled[base + 2];
        }
      }
      double* out = cache.patch_act.data() +
                    static_cast<std::size_t>(py * pside + px) * static_cast<std::size_t>(cfg.patch_emb);
      matvec(params.w, l.enc_patch_w, cfg.patch_emb, cfg.patch_dim(), patch,
             params.w, l.enc_patch_b, out);
      tanh_inplace(out, cfg.patch_emb);
    }
  }

  cache.h1_act.assign(static_cast<std::size_t>(cfg.enc_hidden), 0.0);
  matvec(params.w, l.enc_h1_w, cfg.enc_hidden, cfg.enc_concat(), cache.patch_act,
         params.w, l.enc_h1_b, cache.h1_act.data());
  tanh_inplace(cache.h1_act.data(), cfg.enc_hidden);

  cache.features.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
  matvec(params.w, l.enc_h2_w, cfg.feature_dim, cfg.enc_hidden, cache.h1_act,
         params.w, l.enc_h2_b, cache.features.data());
  tanh_inplace(cache.features.data(), cfg.feature_dim);
  return cache;
}

void encode_backward(const PolicyParams& params, const EncodeCache& cache,
                     std::span<const double> dfeatures, std::vector<double>& grad) {
  const PolicyConfig& cfg = params.cfg;
  const ParamLayout l = make_layout(cfg);

  std::vector<double> dfeat(dfeatures.begin(), dfeatures.end());
  tanh_backward(cache.features.data(), dfeat.data(), cfg.feature_dim);

  std::vector<double> dh1(static_cast<std::size_t>(cfg.enc_hidden), 0.0);
  matvec_backward(params.w, l.enc_h2_w, cfg.feature_dim, cfg.enc_hidden,
                  cache.h1_act, dfeat, grad, l.enc_h2_b, dh1.data());
  tanh_backward(cache.h1_act.data(), dh1.data(), cfg.enc_hidden);

  std::vector<double> dpatch(static_cast<std::size_t>(cfg.enc_concat()), 0.0);
  matvec_backward(params.w, l.enc_h1_w, cfg.enc_hidden, cfg.enc_concat(),
                  cache.patch_act, dh1, grad, l.enc_h1_b, dpatch.data());
  tanh_backward(cache.patch_act.data(), dpatch.data(), cfg.enc_concat());

  // Reassemble each patch input to accumulate the shared projection gradient.
  const int pside = cfg.patches_per_side();
  std::vector<double> patch(static_cast<std::size_t>(cfg.patch_dim()));
  for (int py = 0; py < pside; ++py) {
    for (int px = 0; px < pside; ++px) {
      std::size_t k = 0;
      for (int cy = py * cfg.patch_cells; cy < (py + 1) * cfg.patch_cells; ++cy) {
        for (int cx = px * cfg.patch_cells; cx < (px + 1) * cfg.patch_cells; ++cx) {
          const std::size_t base =
              3 * (static_cast<std::size_t>(cy) * static_cast<std::size_t>(cfg.pooled_hw) + static_cast<std::size_t>(cx));
          patch[k++] = cache.pooled[base];
          patch[k++] = cache.pooled[base + 1];
          patch[k++] = cache.pooled[base + 2];
        }
      }
      const std::span<const double> dp(
          dpatch.data() + static_cast<std::size_t>(py * pside + px) * static_cast<std::size_t>(cfg.patch_emb),
          static_cast<std::size_t>(cfg.patch_emb));
      matvec_backward(params.w, l.enc_patch_w, cfg.patch_emb, cfg.patch_dim(),
                      patch, dp, grad, l.enc_patch_b, nullptr);
    }
  }
}

EncodeResult encode(const Image& img, const PolicyParams& params) {
  const EncodeCache cache = encode_forward(params, img);
  EncodeResult r;
  r.features = cache.features;
  r.trace.layers = {cache.pooled, cache.patch_act, cache.h1_act, cache.features};
  return r;
}

void PhaseState::feed(Token tok, TaskKind task) {
  started = true;
  if (malformed) return;
  if (tok == kTokEnd) return;  // END terminates; state after END is unused

  if (task == TaskKind::BinaryStabilityTop) {
    if ((tok == kTokYes || tok == kTokNo) && !binary_answered && !in_int) {
      binary_answered = true;
    } else {
      malformed = true;
    }
    return;
  }

  if (tok == kTokYes || tok == kTokNo) {
    malformed = true;
    return;
  }
  if (tok == kTokMinus) {
    if (!in_int) {
      in_int = true;
    } else {
      malformed = true;
    }
    return;
  }
  if (tok <= 9) {
    in_int = true;
    ++cur_digits;
    return;
  }
  // comma
  if (task == TaskKind::XYSide && cur_int_index == 0 && cur_digits > 0) {
    cur_int_index = 1;
    in_int = false;
    cur_digits = 0;
  } else {
    malformed = true;
  }
}

void PhaseState::features(double out[kPhaseDim], TaskKind task) const {
  out[0] = started ? 0.0 : 1.0;
  out[1] = binary_answered ? 1.0 : 0.0;
  out[2] = in_int ? 1.0 : 0.0;
  out[3] = cur_digits > 0 ? 1.0 : 0.0;
  out[4] = static_cast<double>(cur_digits) / 4.0;
  out[5] = static_cast<double>(cur_int_index);
  out[6] = (task == TaskKind::XYSide && cur_int_index == 0) ? 1.0 : 0.0;
  out[7] = malformed ? 1.0 : 0.0;
}

void task_descriptor(TaskKind task, double out[kTaskDescDim]) {
  out[0] = task_dataset(task) == DatasetKind::SideBlock ? 1.0 : 0.0;
  out[1] = task_is_action(task) ? 1.0 : 0.0;
  out[2] = task == TaskKind::XYSide ? 1.0 : 0.0;
  out[3] = task == TaskKind::BinaryStabilityTop ? 1.0 : 0.0;
}

namespace {

// Assembles the decoder input for one step; sum_emb is the running sum of
// embeddings of previously emitted tokens.
void build_step_input(const PolicyParams& params, const ParamLayout& l,
                      std::span<const double> features, TaskKind task,
                      Token prev, const std::vector<double>& sum_emb, int pos,
                      const PhaseState& phase, std::vector<double>& x) {
  const PolicyConfig& cfg = params.cfg;
  const Slots s = input_slots(cfg);
  x.assign(static_cast<std::size_t>(l.dec_in), 0.0);
  std::copy(features.begin(), features.end(), x.begin() + s.feat);
  const std::size_t te = l.task_emb + static_cast<std::size_t>(task) * static_cast<std::size_t>(cfg.task_emb_dim);
  std::copy(params.w.begin() + static_cast<std::ptrdiff_t>(te),
            params.w.begin() + static_cast<std::ptrdiff_t>(te + static_cast<std::size_t>(cfg.task_emb_dim)),
            x.begin() + s.task_emb);
  task_descriptor(task, x.data() + s.desc);
  const std::size_t pe = l.tok_emb + static_cast<std::size_t>(prev) * static_cast<std::size_t>(cfg.tok_emb_dim);
  std::copy(params.w.begin() + static_cast<std::ptrdiff_t>(pe),
            params.w.begin() + static_cast<std::ptrdiff_t>(pe + static_cast<std::size_t>(cfg.tok_emb_dim)),
            x.begin() + s.prev);
  std::copy(sum_emb.begin(), sum_emb.end(), x.begin() + s.sum);
  const int p = std::min(pos, cfg.max_len - 1);
  const std::size_t po = l.pos_emb + static_cast<std::size_t>(p) * static_cast<std::size_t>(cfg.pos_emb_dim);
  std::copy(params.w.begin() + static_cast<std::ptrdiff_t>(po),
            params.w.begin() + static_cast<std::ptrdiff_t>(po + static_cast<std::size_t>(cfg.pos_emb_dim)),
            x.begin() + s.pos);
  phase.features(x.data() + s.phase, task);
}

void step_forward(const PolicyParams& params, const ParamLayout& l,
                  const std::vector<double>& x, TaskKind task,
                  const PhaseState& phase, DecoderStep& step) {
  const PolicyConfig& cfg = params.cfg;
  step.x = x;
  step.h1.assign(static_cast<std::size_t>(cfg.dec_hidden), 0.0);
  matvec(params.w, l.dec_h1_w, cfg.dec_hidden, l.dec_in, x, params.w, l.dec_h1_b,
         step.h1.data());
  tanh_inplace(step.h1.data(), cfg.dec_hidden);
  step.h2.assign(static_cast<std::size_t>(cfg.dec_hidden), 0.0);
  matvec(params.w, l.dec_h2_w, cfg.dec_hidden, cfg.dec_hidden, step.h1, params.w,
         l.dec_h2_b, step.h2.data());
  tanh_inplace(step.h2.data(), cfg.dec_hidden);

  std::vector<double> oin(static_cast<std::size_t>(l.out_in), 0.0);
  std::copy(step.h2.begin(), step.h2.end(), oin.begin());
  phase.features(oin.data() + cfg.dec_hidden, task);
  task_descriptor(task, oin.data() + cfg.dec_hidden + kPhaseDim);

  std::vector<double> logits(kVocabSize, 0.0);
  matvec(params.w, l.out_w, kVocabSize, l.out_in, oin, params.w, l.out_b,
         logits.data());
  step.logp.assign(kVocabSize, 0.0);
  log_softmax(logits.data(), kVocabSize, step.logp.data());
}

void add_token_embedding(const PolicyParams& params, const ParamLayout& l,
                         Token tok, std::vector<double>& sum_emb) {
  const std::size_t off = l.tok_emb + static_cast<std::size_t>(tok) * static_cast<std::size_t>(params.cfg.tok_emb_dim);
  for (int i = 0; i < params.cfg.tok_emb_dim; ++i) {
    sum_emb[static_cast<std::size_t>(i)] += params.w[off + static_cast<std::size_t>(i)];
  }
}

}  // namespace

DecoderRun decoder_forward(const PolicyParams& params,
                           std::span<const double> features, TaskKind task,
                           const TokenSequence& tokens) {
  const PolicyConfig& cfg = params.cfg;
  const ParamLayout l = make_layout(cfg);
  DecoderRun run;
  run.steps.reserve(tokens.size());

  PhaseState phase;
  std::vector<double> sum_emb(static_cast<std::size_t>(cfg.tok_emb_dim), 0.0);
  Token prev = kTokBos;
  std::vector<double> x;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    DecoderStep step;
    build_step_input(params, l, features, task, prev, sum_emb, static_cast<int>(t), phase, x);
    step_forward(params, l, x, task, phase, step);
    step.token = tokens[t];
    run.logprob += step.logp[tokens[t]];
    run.steps.push_back(std::move(step));

    add_token_embedding(params, l, tokens[t], sum_emb);
    phase.feed(tokens[t], task);
    prev = tokens[t];
  }
  return run;
}

void decoder_backward(const PolicyParams& params, TaskKind task,
                      const DecoderRun& run, std::span<const double> weights,
                      std::vector<double>& grad, std::vector<double>& dfeatures) {
  const PolicyConfig& cfg = params.cfg;
  const ParamLayout l = make_layout(cfg);
  const Slots s = input_slots(cfg);
  const std::size_t n = run.steps.size();

  // Per-step input gradients, then scatter embedding/feature contributions.
  std::vector<std::vector<double>> dxs(n);
  std::vector<double> dlogits(kVocabSize);
  std::vector<double> oin(static_cast<std::size_t>(l.out_in));
  std::vector<double> doin(static_cast<std::size_t>(l.out_in));
  std::vector<double> dh2(static_cast<std::size_t>(cfg.dec_hidden));
  std::vector<double> dh1(static_cast<std::size_t>(cfg.dec_hidden));

  // Recompute phase sequence to rebuild output-layer inputs.
  PhaseState phase;
  std::vector<PhaseState> phases(n);
  for (std::size_t t = 0; t < n; ++t) {
    phases[t] = phase;
    phase.feed(run.steps[t].token, task);
  }

  for (std::size_t t = 0; t < n; ++t) {
    const DecoderStep& step = run.steps[t];
    const double wgt = weights[t];
    if (wgt == 0.0) {
      dxs[t].assign(static_cast<std::size_t>(l.dec_in), 0.0);
      continue;
    }
    // d/dlogits of w * logp[token] = w * (onehot - softmax)
    for (int k = 0; k < kVocabSize; ++k) {
      dlogits[static_cast<std::size_t>(k)] = -wgt * std::exp(step.logp[static_cast<std::size_t>(k)]);
    }
    dlogits[step.token] += wgt;

    std::copy(step.h2.begin(), step.h2.end(), oin.begin());
    phases[t].features(oin.data() + cfg.dec_hidden, task);
    task_descriptor(task, oin.data() + cfg.dec_hidden + kPhaseDim);
    std::fill(doin.begin(), doin.end(), 0.0);
    matvec_backward(params.w, l.out_w, kVocabSize, l.out_in, oin, dlogits, grad,
                    l.out_b, doin.data());

    std::copy(doin.begin(), doin.begin() + cfg.dec_hidden, dh2.begin());
    tanh_backward(step.h2.data(), dh2.data(), cfg.dec_hidden);
    std::fill(dh1.begin(), dh1.end(), 0.0);
    matvec_backward(params.w, l.dec_h2_w, cfg.dec_hidden, cfg.dec_hidden, step.h1,
                    dh2, grad, l.dec_h2_b, dh1.data());
    tanh_backward(step.h1.data(), dh1.data(), cfg.dec_hidden);
    dxs[t].assign(static_cast<std::size_t>(l.dec_in), 0.0);
    matvec_backward(params.w, l.dec_h1_w, cfg.dec_hidden, l.dec_in, step.x, dh1,
                    grad, l.dec_h1_b, dxs[t].data());
  }

  // Features and task embedding: summed over steps.
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < cfg.feature_dim; ++i) {
      dfeatures[static_cast<std::size_t>(i)] += dxs[t][static_cast<std::size_t>(s.feat + i)];
    }
    const std::size_t te = l.task_emb + static_cast<std::size_t>(task) * static_cast<std::size_t>(cfg.task_emb_dim);
    for (int i = 0; i < cfg.task_emb_dim; ++i) {
      grad[te + static_cast<std::size_t>(i)] += dxs[t][static_cast<std::size_t>(s.task_emb + i)];
    }
    const int p = std::min(static_cast<int>(t), cfg.max_len - 1);
    const std::size_t po = l.pos_emb + static_cast<std::size_t>(p) * static_cast<std::size_t>(cfg.pos_emb_dim);
    for (int i = 0; i < cfg.pos_emb_dim; ++i) {
      grad[po + static_cast<std::size_t>(i)] += dxs[t][static_cast<std::size_t>(s.pos + i)];
    }
  }

  // Token embeddings: "prev" slot at step u+1 plus "sum" slots at steps > u.
  // BOS feeds the "prev" slot of step 0.
  if (n > 0) {
    const std::size_t bos = l.tok_emb + static_cast<std::size_t>(kTokBos) * static_cast<std::size_t>(cfg.tok_emb_dim);
    for (int i = 0; i < cfg.tok_emb_dim; ++i) {
      grad[bos + static_cast<std::size_t>(i)] += dxs[0][static_cast<std::size_t>(s.prev + i)];
    }
    std::vector<double> suffix(static_cast<std::size_t>(cfg.tok_emb_dim), 0.0);
    for (std::size_t u = n; u-- > 1;) {
      // after this loop step, suffix = sum of dx[sum slot] over steps > u-1
      for (int i = 0; i < cfg.tok_emb_dim; ++i) {
        suffix[static_cast<std::size_t>(i)] += dxs[u][static_cast<std::size_t>(s.sum + i)];
      }
      const Token tok = run.steps[u - 1].token;
      const std::size_t eo = l.tok_emb + static_cast<std::size_t>(tok) * static_cast<std::size_t>(cfg.tok_emb_dim);
      for (int i = 0; i < cfg.tok_emb_dim; ++i) {
        grad[eo + static_cast<std::size_t>(i)] +=
            suffix[static_cast<std::size_t>(i)] + dxs[u][static_cast<std::size_t>(s.prev + i)];
      }
    }
  }
}

namespace {

TokenSequence decode_one(const PolicyParams& params, const EncodeCache& enc,
                         TaskKind task, double temperature, Rng* rng,
                         std::vector<double>* logps_out,
                         std::vector<double>* logps_model_out = nullptr) {
  const PolicyConfig& cfg = params.cfg;
  const ParamLayout l = make_layout(cfg);
  TokenSequence tokens;
  PhaseState phase;
  std::vector<double> sum_emb(static_cast<std::size_t>(cfg.tok_emb_dim), 0.0);
  Token prev = kTokBos;
  std::vector<double> x;
  DecoderStep step;

  for (int t = 0; t < cfg.max_len; ++t) {
    build_step_input(params, l, enc.features, task, prev, sum_emb, t, phase, x);
    step_forward(params, l, x, task, phase, step);

    Token chosen = 0;
    if (rng == nullptr) {
      double best = step.logp[0];
      for (int k = 1; k < kVocabSize; ++k) {
        if (step.logp[static_cast<std::size_t>(k)] > best) {
          best = step.logp[static_cast<std::size_t>(k)];
          chosen = static_cast<Token>(k);
        }
      }
    } else {
      // Sampling distribution: softmax(logits / T) = softmax(logp / T).
      double scaled[kVocabSize];
      double mx = -1e300;
      for (int k = 0; k < kVocabSize; ++k) {
        scaled[k] = step.logp[static_cast<std::size_t>(k)] / temperature;
        mx = std::max(mx, scaled[k]);
      }
      double total = 0.0;
      for (int k = 0; k < kVocabSize; ++k) {
        scaled[k] = std::exp(scaled[k] - mx);
        total += scaled[k];
      }
      const double u = rng->uniform01() * total;
      double acc = 0.0;
      chosen = kVocabSize - 1;
      for (int k = 0; k < kVocabSize; ++k) {
        acc += scaled[k];
        if (u < acc) {
          chosen = static_cast<Token>(k);
          break;
        }
      }
      if (logps_out != nullptr) {
        logps_out->push_back(std::log(scaled[chosen] / total));
      }
      if (logps_model_out != nullptr) {
        logps_model_out->push_back(step.logp[chosen]);
      }
    }
    tokens.push_back(chosen);
    if (chosen == kTokEnd) break;
    add_token_embedding(params, l, chosen, sum_emb);
    phase.feed(chosen, task);
    prev = chosen;
  }
  return tokens;
}

}  // namespace

CompletionBatch sample_completions(const Image& img, TaskKind task,
                                   const PolicyParams& params, int n,
                                   double temperature, std::uint64_t seed) {
  if (n < 2) throw std::runtime_error("sample_completions: need n >= 2");
  if (!(temperature > 0.0)) throw std::runtime_error("sample_completions: temperature must be > 0");
  const EncodeCache enc = encode_forward(params, img);
  CompletionBatch batch;
  batch.image = img;
  batch.task = task;
  batch.completions.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, SeedDomain::Sample, static_cast<std::uint64_t>(i)));
    Completion& c = batch.completions[static_cast<std::size_t>(i)];
    c.tokens = decode_one(params, enc, task, temperature, &rng, &c.logps, &c.logps_model);
  }
  return batch;
}

TokenSequence greedy_decode(const Image& img, TaskKind task,
                            const PolicyParams& params) {
  const EncodeCache enc = encode_forward(params, img);
  return decode_one(params, enc, task, 1.0, nullptr, nullptr);
}

double sequence_logprob(const TokenSequence& tokens, const Image& img,
                        TaskKind task, const PolicyParams& params) {
  const EncodeCache enc = encode_forward(params, img);
  return decoder_forward(params, enc.features, task, tokens).logprob;
}

GradResult logprob_and_grad(const TokenSequence& tokens, const Image& img,
                            TaskKind task, const PolicyParams& params) {
  const ParamLayout l = make_layout(params.cfg);
  GradResult r;
  r.grad.assign(l.total, 0.0);
  const EncodeCache enc = encode_forward(params, img);
  const DecoderRun run = decoder_forward(params, enc.features, task, tokens);
  r.logprob = run.logprob;
  std::vector<double> weights(tokens.size(), 1.0);
  std::vector<double> dfeatures(static_cast<std::size_t>(params.cfg.feature_dim), 0.0);
  decoder_backward(params, task, run, weights, r.grad, dfeatures);
  encode_backward(params, enc, dfeatures, r.grad);
  return r;
}

namespace {

constexpr char kCkptMagic[8] = {'T', 'W', 'R', 'L', 'A', 'B', '0', '1'};

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_vec(std::ofstream& f, const std::vector<double>& v) {
  write_u64(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::vector<double> read_vec(std::ifstream& f) {
  const std::uint64_t n = read_u64(f);
  std::vector<double> v(n);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp);
    f.write(kCkptMagic, sizeof(kCkptMagic));
    write_u64(f, ckpt.params.cfg.arch_hash());
    write_vec(f, ckpt.params.w);
    write_vec(f, ckpt.adam_m);
    write_vec(f, ckpt.adam_v);
    write_u64(f, static_cast<std::uint64_t>(ckpt.adam_t));
    write_u64(f, static_cast<std::uint64_t>(ckpt.global_step));
    if (!f) throw std::runtime_error("checkpoint: write failed " + tmp);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("checkpoint: rename failed " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path, const PolicyConfig& cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint64_t hash = read_u64(f);
  if (hash != cfg.arch_hash()) {
    throw std::runtime_error("checkpoint: architecture hash mismatch in " + path);
  }
  Checkpoint ckpt;
  ckpt.params.cfg = cfg;
  ckpt.params.w = read_vec(f);
  ckpt.adam_m = read_vec(f);
  ckpt.adam_v = read_vec(f);
  ckpt.adam_t = static_cast<std::int64_t>(read_u64(f));
  ckpt.global_step = static_cast<std::int64_t>(read_u64(f));
  if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
  const ParamLayout l = make_layout(cfg);
  if (ckpt.params.w.size() != l.total) {
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  }
  return ckpt;
}

}  // namespace towerlab
