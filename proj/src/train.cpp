#include "towerlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "towerlab/rng.hpp"

namespace towerlab {

namespace fs = std::filesystem;

const char* method_name(Method m) {
  switch (m) {
    case Method::GRPO: return "grpo";
    case Method::GSPO: return "gspo";
    case Method::SFT: return "sft";
  }
  return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
  if (name == "grpo") return Method::GRPO;
  if (name == "gspo") return Method::GSPO;
  if (name == "sft") return Method::SFT;
  return std::nullopt;
}

int TrainConfig::total_steps() const {
  if (!interleave.empty()) return interleave_steps;
  int total = 0;
  for (const auto& seg : schedule) total += seg.steps;
  return total;
}

TaskKind TrainConfig::task_at(int step) const {
  int acc = 0;
  for (const auto& seg : schedule) {
    acc += seg.steps;
    if (step < acc) return seg.task;
  }
  return schedule.empty() ? TaskKind::BinaryStabilityTop : schedule.back().task;
}

std::vector<double> grpo_advantages(std::span<const double> rewards, double eps) {
  const auto n = rewards.size();
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);  // population std
  const double denom = std::sqrt(var) + eps;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mean) / denom;
  return out;
}

namespace {

std::vector<double> batch_advantages(const CompletionBatch& batch, double adv_eps) {
  std::vector<double> rewards;
  rewards.reserve(batch.completions.size());
  for (const auto& c : batch.completions) rewards.push_back(c.reward);
  return grpo_advantages(rewards, adv_eps);
}

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

}  // namespace

LossResult grpo_loss_with_advantages(const CompletionBatch& batch,
                                     std::span<const double> advantages,
                                     const PolicyParams& new_params, double eta) {
  const ParamLayout l = make_layout(new_params.cfg);
  LossResult out;
  out.grad.assign(l.total, 0.0);

  std::size_t total_tokens = 0;
  for (const auto& c : batch.completions) {
    if (c.tokens.empty()) throw std::runtime_error("grpo_loss: empty completion");
    total_tokens += c.tokens.size();
  }
  const double inv_tokens = 1.0 / static_cast<double>(total_tokens);

  const EncodeCache enc = encode_forward(new_params, batch.image);
  std::vector<double> dfeatures(static_cast<std::size_t>(new_params.cfg.feature_dim), 0.0);

  double surrogate_sum = 0.0;
  for (std::size_t i = 0; i < batch.completions.size(); ++i) {
    const Completion& c = batch.completions[i];
    const double adv = advantages[i];
    const DecoderRun run = decoder_forward(new_params, enc.features, batch.task, c.tokens);
    std::vector<double> weights(c.tokens.size(), 0.0);
    for (std::size_t t = 0; t < c.tokens.size(); ++t) {
      const double ratio = std::exp(run.steps[t].logp[c.tokens[t]] - c.logps[t]);
      const double unclipped = ratio * adv;
      const double clipped = clip(ratio, 1.0 - eta, 1.0 + eta) * adv;
      surrogate_sum += std::min(unclipped, clipped);
      // Gradient flows only while the unclipped term attains the min.
      if (unclipped <= clipped) {
        weights[t] = -adv * ratio * inv_tokens;
      }
    }
    decoder_backward(new_params, batch.task, run, weights, out.grad, dfeatures);
  }
  encode_backward(new_params, enc, dfeatures, out.grad);
  out.loss = -surrogate_sum * inv_tokens;
  return out;
}

LossResult grpo_loss(const CompletionBatch& batch, const PolicyParams& new_params,
                     double eta, double adv_eps) {
  return grpo_loss_with_advantages(batch, batch_advantages(batch, adv_eps),
                                   new_params, eta);
}

LossResult gspo_loss_with_advantages(const CompletionBatch& batch,
                                     std::span<const double> advantages,
                                     const PolicyParams& new_params, double eta) {
  const ParamLayout l = make_layout(new_params.cfg);
  LossResult out;
  out.grad.assign(l.total, 0.0);

  const EncodeCache enc = encode_forward(new_params, batch.image);
  std::vector<double> dfeatures(static_cast<std::size_t>(new_params.cfg.feature_dim), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.completions.size());

  double surrogate_sum = 0.0;
  for (std::size_t i = 0; i < batch.completions.size(); ++i) {
    const Completion& c = batch.completions[i];
    if (c.tokens.empty()) throw std::runtime_error("gspo_loss: empty completion");
    const double adv = advantages[i];
    const DecoderRun run = decoder_forward(new_params, enc.features, batch.task, c.tokens);
    double old_seq = 0.0;
    for (double lp : c.logps) old_seq += lp;
    const double len = static_cast<double>(c.tokens.size());
    // Length-normalized sequence ratio (geometric mean of token ratios).
    const double ratio = std::exp((run.logprob - old_seq) / len);
    const double unclipped = ratio * adv;
    const double clipped = clip(ratio, 1.0 - eta, 1.0 + eta) * adv;
    surrogate_sum += std::min(unclipped, clipped);
    if (unclipped <= clipped) {
      const double w = -adv * ratio / len * inv_n;
      std::vector<double> weights(c.tokens.size(), w);
      decoder_backward(new_params, batch.task, run, weights, out.grad, dfeatures);
    }
  }
  encode_backward(new_params, enc, dfeatures, out.grad);
  out.loss = -surrogate_sum * inv_n;
  return out;
}

LossResult gspo_loss(const CompletionBatch& batch, const PolicyParams& new_params,
                     double eta, double adv_eps) {
  return gspo_loss_with_advantages(batch, batch_advantages(batch, adv_eps),
                                   new_params, eta);
}

LossResult sft_loss(const TokenSequence& target, const Image& img, TaskKind task,
                    const PolicyParams& params) {
  const ParamLayout l = make_layout(params.cfg);
  LossResult out;
  out.grad.assign(l.total, 0.0);
  const EncodeCache enc = encode_forward(params, img);
  const DecoderRun run = decoder_forward(params, enc.features, task, target);
  out.loss = -run.logprob;
  std::vector<double> weights(target.size(), -1.0);
  std::vector<double> dfeatures(static_cast<std::size_t>(params.cfg.feature_dim), 0.0);
  decoder_backward(params, task, run, weights, out.grad, dfeatures);
  encode_backward(params, enc, dfeatures, out.grad);
  return out;
}

void adam_step(PolicyParams& params, std::span<const double> grad, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  const std::size_t n = params.w.size();
  if (grad.size() != n) throw std::runtime_error("adam_step: size mismatch");
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);  // round-trip exact, resume re-reads these values
  out << "step,task,mean_reward_or_loss,running_avg25,sequences_seen,tokens_seen\n";
  for (const auto& r : rows) {
    out << r.step << "," << r.task << "," << r.value << "," << r.running25 << ","
        << r.sequences_seen << "," << r.tokens_seen << "\n";
  }
  return out.str();
}

TrainLog TrainLog::from_csv_file(const std::string& path) {
  TrainLog log;
  std::ifstream f(path);
  if (!f) return log;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    TrainLogRow row;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    row.step = std::stoi(field);
    std::getline(ss, row.task, ',');
    std::getline(ss, field, ',');
    row.value = std::stod(field);
    std::getline(ss, field, ',');
    row.running25 = std::stod(field);
    std::getline(ss, field, ',');
    row.sequences_seen = std::stoll(field);
    std::getline(ss, field, ',');
    row.tokens_seen = std::stoll(field);
    log.rows.push_back(row);
  }
  return log;
}

namespace {

struct DiagnosticInfo {
  int step;
  double loss;
};

void write_diagnostic(const std::string& out_dir, const PolicyParams& params,
                      const AdamState& adam, const DiagnosticInfo& info) {
  Checkpoint snap;
  snap.params = params;
  snap.adam_m = adam.m;
  snap.adam_v = adam.v;
  snap.adam_t = adam.t;
  snap.global_step = info.step;
  save_checkpoint(out_dir + "/diagnostic_snapshot.bin", snap);
  std::ofstream f(out_dir + "/diagnostic.txt");
  f << "non-finite loss at step " << info.step << " loss=" << info.loss << "\n";
}

std::uint64_t instance_seed_for(const TrainConfig& cfg, int step, int k) {
  if (cfg.fixed_dataset > 0) {
    const int batch = cfg.method == Method::SFT
                          ? cfg.prompts_per_batch * cfg.group_size
                          : cfg.prompts_per_batch;
    const std::uint64_t pool_idx =
        (static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) +
         static_cast<std::uint64_t>(k)) %
        static_cast<std::uint64_t>(cfg.fixed_dataset);
    return train_instance_seed(cfg.seed, 0, pool_idx);
  }
  return train_instance_seed(cfg.seed, static_cast<std::uint64_t>(step) + 1,
                             static_cast<std::uint64_t>(k));
}

TaskKind pick_task(const TrainConfig& cfg, int step) {
  if (cfg.interleave.empty()) return cfg.task_at(step);
  Rng rng(derive_seed(cfg.seed, SeedDomain::Interleave, static_cast<std::uint64_t>(step)));
  double total = 0.0;
  for (const auto& [task, w] : cfg.interleave) total += w;
  double u = rng.uniform01() * total;
  for (const auto& [task, w] : cfg.interleave) {
    u -= w;
    if (u < 0.0) return task;
  }
  return cfg.interleave.back().first;
}

}  // namespace

TrainLog train(const TrainConfig& cfg, const std::string& out_dir, bool resume) {
  if (cfg.schedule.empty() && cfg.interleave.empty()) {
    throw std::runtime_error("train: empty schedule");
  }
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/checkpoints");

  PolicyParams params = PolicyParams::init(cfg.policy, cfg.seed);
  AdamState adam;
  int start_step = 0;
  TrainLog log;

  if (resume) {
    int best = -1;
    for (const auto& e : fs::directory_iterator(out_dir + "/checkpoints")) {
      const std::string name = e.path().filename().string();
      if (name.rfind("ckpt_", 0) == 0 && name.size() > 9) {
        best = std::max(best, std::atoi(name.substr(5, name.size() - 9).c_str()));
      }
    }
    if (best >= 0) {
      Checkpoint ckpt = load_checkpoint(
          out_dir + "/checkpoints/ckpt_" + std::to_string(best) + ".bin", cfg.policy);
      params = std::move(ckpt.params);
      adam.m = std::move(ckpt.adam_m);
      adam.v = std::move(ckpt.adam_v);
      adam.t = ckpt.adam_t;
      start_step = static_cast<int>(ckpt.global_step);
      TrainLog old = TrainLog::from_csv_file(out_dir + "/log.csv");
      for (const auto& row : old.rows) {
        if (row.step <= start_step) log.rows.push_back(row);
      }
    }
  }

  std::int64_t sequences_seen = log.rows.empty() ? 0 : log.rows.back().sequences_seen;
  std::int64_t tokens_seen = log.rows.empty() ? 0 : log.rows.back().tokens_seen;

  auto save = [&](int step) {
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.adam_m = adam.m;
    ckpt.adam_v = adam.v;
    ckpt.adam_t = adam.t;
    ckpt.global_step = step;
    save_checkpoint(out_dir + "/checkpoints/ckpt_" + std::to_string(step) + ".bin",
                    ckpt);
  };
  auto flush_log = [&]() {
    std::ofstream f(out_dir + "/log.csv", std::ios::trunc);
    f << log.to_csv();
  };

  if (start_step == 0) save(0);

  const int total = cfg.total_steps();
  const ParamLayout layout = make_layout(cfg.policy);

  for (int step = start_step; step < total; ++step) {
    const TaskKind task = pick_task(cfg, step);
    std::vector<double> grad(layout.total, 0.0);
    double value = 0.0;

    if (cfg.method == Method::SFT) {
      const int batch = cfg.prompts_per_batch * cfg.group_size;
      double loss_sum = 0.0;
      for (int k = 0; k < batch; ++k) {
        const TaskInstance inst =
            make_instance(task, instance_seed_for(cfg, step, k), cfg.world);
        const Image img = rasterize(inst.scene, cfg.camera);
        const TokenSequence target = sft_target(inst);
        const LossResult res = sft_loss(target, img, task, params);
        loss_sum += res.loss;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += res.grad[i];
        sequences_seen += 1;
        tokens_seen += static_cast<std::int64_t>(target.size());
      }
      const double inv = 1.0 / batch;
      for (double& g : grad) g *= inv;
      value = loss_sum * inv;
    } else {
      double reward_sum = 0.0;
      int reward_count = 0;
      for (int p = 0; p < cfg.prompts_per_batch; ++p) {
        const TaskInstance inst =
            make_instance(task, instance_seed_for(cfg, step, p), cfg.world);
        const Image img = rasterize(inst.scene, cfg.camera);
        CompletionBatch batch = sample_completions(
            img, task, params, cfg.group_size, cfg.temperature,
            derive_seed(cfg.seed, SeedDomain::Sample,
                        static_cast<std::uint64_t>(step) + 1,
                        static_cast<std::uint64_t>(p)));
        // The surrogate's old log-probs are the model's (temperature 1); a
        // temperature above 1 then acts as pure exploration noise.
        for (auto& c : batch.completions) c.logps = c.logps_model;
        for (auto& c : batch.completions) {
          c.reward = reward(inst, parse_answer(c.tokens, task), cfg.world, cfg.reward);
          reward_sum += c.reward;
          reward_count += 1;
          sequences_seen += 1;
          tokens_seen += static_cast<std::int64_t>(c.tokens.size());
        }
        const LossResult res = cfg.method == Method::GRPO
                                   ? grpo_loss(batch, params, cfg.clip_eta, cfg.adv_eps)
                                   : gspo_loss(batch, params, cfg.clip_eta, cfg.adv_eps);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += res.grad[i];
        if (!std::isfinite(res.loss)) {
          write_diagnostic(out_dir, params, adam, {step, res.loss});
          flush_log();
          throw std::runtime_error("train: non-finite loss at step " +
                                   std::to_string(step));
        }
      }
      const double inv = 1.0 / cfg.prompts_per_batch;
      for (double& g : grad) g *= inv;
      value = reward_sum / reward_count;
    }

    if (!std::isfinite(value)) {
      write_diagnostic(out_dir, params, adam, {step, value});
      flush_log();
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }

    adam_step(params, grad, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

    TrainLogRow row;
    row.step = step + 1;
    row.task = task_name(task);
    row.value = value;
    double avg = 0.0;
    int cnt = 0;
    for (std::size_t i = log.rows.size(); i-- > 0 && cnt < 24;) {
      avg += log.rows[i].value;
      ++cnt;
    }
    row.running25 = (avg + value) / (cnt + 1);
    row.sequences_seen = sequences_seen;
    row.tokens_seen = tokens_seen;
    log.rows.push_back(row);

    const int done = step + 1;
    if (done % cfg.checkpoint_interval == 0 || done == total) {
      save(done);
      flush_log();
    }
  }

  flush_log();
  return log;
}

}  // namespace towerlab
