#include "towerlab/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "towerlab/linear_models.hpp"
#include "towerlab/png_io.hpp"
#include "towerlab/render.hpp"
#include "towerlab/rng.hpp"

namespace towerlab {

namespace fs = std::filesystem;

namespace {

struct PerInstance {
  double reward = 0.0;
  bool legal = false;
};

void summarize(const std::vector<PerInstance>& rows, bool legal_only,
               EvalResult& out) {
  out.n = static_cast<int>(rows.size());
  out.n_legal = 0;
  for (const auto& r : rows) out.n_legal += r.legal ? 1 : 0;
  out.legal_rate = out.n > 0 ? static_cast<double>(out.n_legal) / out.n : 0.0;

  double sum = 0.0, sum_sq = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (legal_only && !r.legal) continue;
    sum += r.reward;
    sum_sq += r.reward * r.reward;
    ++count;
  }
  if (count == 0) {
    out.mean = std::numeric_limits<double>::quiet_NaN();
    out.ci_low = out.ci_high = out.mean;
    return;
  }
  out.mean = sum / count;
  const double var = std::max(0.0, sum_sq / count - out.mean * out.mean);
  const double se = std::sqrt(var / count);
  out.ci_low = out.mean - 1.96 * se;
  out.ci_high = out.mean + 1.96 * se;
}

}  // namespace

EvalResult evaluate(const PolicyParams& params, TaskKind task, int n,
                    std::uint64_t seed, const WorldConfig& wcfg,
                    const CameraConfig& cam, const RewardConfig& rcfg,
                    bool legal_only, AnswerSource source, int workers) {
  std::vector<PerInstance> rows(static_cast<std::size_t>(n));

  auto run_range = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const std::uint64_t s = eval_instance_seed(seed, static_cast<std::uint64_t>(task),
                                                 static_cast<std::uint64_t>(i));
      const TaskInstance inst = make_instance(task, s, wcfg);
      ParsedAction action;
      switch (source) {
        case AnswerSource::Model: {
          const Image img = rasterize(inst.scene, cam);
          action = parse_answer(greedy_decode(img, task, params), task);
          break;
        }
        case AnswerSource::Oracle:
          action = parse_answer(oracle_answer_tokens(inst), task);
          break;
        case AnswerSource::RandomLegal: {
          Rng rng(derive_seed(s, SeedDomain::Baseline));
          action = random_legal_action(task, rng);
          break;
        }
      }
      rows[static_cast<std::size_t>(i)].legal = action.legal();
      rows[static_cast<std::size_t>(i)].reward = reward(inst, action, wcfg, rcfg);
    }
  };

  if (workers <= 1 || n < 2 * workers) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int lo = w * chunk;
      const int hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (auto& t : pool) t.join();
  }

  EvalResult out;
  summarize(rows, legal_only, out);
  return out;
}

std::string EvalMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "# schema: matrix-v1\n";
  out << "method,trained_on,evaluated_on,step,mean,ci_low,ci_high,legal_rate\n";
  for (const auto& c : cells) {
    out << c.method << "," << c.trained_on << "," << c.evaluated_on << ","
        << c.step << ",";
    if (c.present) {
      out << c.result.mean << "," << c.result.ci_low << "," << c.result.ci_high
          << "," << c.result.legal_rate;
    } else {
      out << "absent,absent,absent,absent";
    }
    out << "\n";
  }
  return out.str();
}

RunSeries discover_run(const std::string& dir, const std::string& method,
                       const std::string& trained_on) {
  RunSeries series;
  series.method = method;
  series.trained_on = trained_on;
  series.dir = dir;
  const fs::path ckpt_dir = fs::path(dir) / "checkpoints";
  if (fs::exists(ckpt_dir)) {
    for (const auto& e : fs::directory_iterator(ckpt_dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("ckpt_", 0) == 0 && name.size() > 9 &&
          name.substr(name.size() - 4) == ".bin") {
        const int step = std::atoi(name.substr(5, name.size() - 9).c_str());
        series.checkpoints.emplace_back(step, e.path().string());
      }
    }
  }
  std::sort(series.checkpoints.begin(), series.checkpoints.end());
  return series;
}

EvalMatrix generalization_matrix(const std::vector<RunSeries>& runs,
                                 const std::vector<TaskKind>& tasks,
                                 const PolicyConfig& pcfg, int n_instances,
                                 std::uint64_t seed, const WorldConfig& wcfg,
                                 const CameraConfig& cam, const RewardConfig& rcfg,
                                 int workers) {
  EvalMatrix matrix;
  for (const auto& run : runs) {
    for (TaskKind eval_task : tasks) {
      if (run.checkpoints.empty()) {
        MatrixCell cell;
        cell.method = run.method;
        cell.trained_on = run.trained_on;
        cell.evaluated_on = task_name(eval_task);
        cell.present = false;
        matrix.cells.push_back(cell);
        continue;
      }
      for (const auto& [step, path] : run.checkpoints) {
        MatrixCell cell;
        cell.method = run.method;
        cell.trained_on = run.trained_on;
        cell.evaluated_on = task_name(eval_task);
        cell.step = step;
        const Checkpoint ckpt = load_checkpoint(path, pcfg);
        cell.result = evaluate(ckpt.params, eval_task, n_instances, seed, wcfg,
                               cam, rcfg, false, AnswerSource::Model, workers);
        cell.present = true;
        matrix.cells.push_back(cell);
      }
    }
  }
  return matrix;
}

ExternalEvalResult external_binary_eval(const PolicyParams& params,
                                        const std::string& image_dir,
                                        const std::string& labels_csv,
                                        const CameraConfig& cam) {
  std::ifstream f(labels_csv);
  if (!f) throw std::runtime_error("external_binary_eval: cannot open " + labels_csv);
  std::vector<std::pair<std::string, bool>> labels;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    std::string name = line.substr(0, comma);
    std::string value = line.substr(comma + 1);
    if (name == "filename") continue;  // header
    labels.emplace_back(name, value.find('1') != std::string::npos);
  }
  if (labels.empty()) {
    throw std::runtime_error("external_binary_eval: no labeled images in " + labels_csv);
  }

  double sum = 0.0, sum_sq = 0.0;
  int legal = 0;
  for (const auto& [name, stable] : labels) {
    const std::string path = (fs::path(image_dir) / name).string();
    if (!fs::exists(path)) {
      throw std::runtime_error("external_binary_eval: missing image " + path);
    }
    Image img = read_png(path);  // throws with the file name on failure
    img = resample(img, cam.image_width, cam.image_height);
    const ParsedAction action = parse_answer(
        greedy_decode(img, TaskKind::BinaryStabilityTop, params),
        TaskKind::BinaryStabilityTop);
    double r = -1.0;
    if (action.kind == ParsedAction::Kind::Yes) r = stable ? 1.0 : 0.0;
    if (action.kind == ParsedAction::Kind::No) r = stable ? 0.0 : 1.0;
    if (action.legal()) ++legal;
    sum += r;
    sum_sq += r * r;
  }
  ExternalEvalResult out;
  out.n = static_cast<int>(labels.size());
  out.mean = sum / out.n;
  const double var = std::max(0.0, sum_sq / out.n - out.mean * out.mean);
  const double se = std::sqrt(var / out.n);
  out.ci_low = out.mean - 1.96 * se;
  out.ci_high = out.mean + 1.96 * se;
  out.legal_rate = static_cast<double>(legal) / out.n;
  return out;
}

const char* probe_target_name(ProbeTarget t) {
  return t == ProbeTarget::BinaryStability ? "stability" : "xoffset";
}

namespace {

struct ProbeDataset {
  DataMatrix features;
  std::vector<double> labels;  // stability 0/1 or signed offset
};

ProbeDataset build_probe_dataset(const PolicyParams& params, ProbeTarget target,
                                 ProbeFeatures feat_kind, int layer,
                                 const ProbeOptions& opt, const WorldConfig& wcfg,
                                 const CameraConfig& cam) {
  ProbeDataset ds;
  ds.labels.resize(static_cast<std::size_t>(opt.n_images));
  for (int i = 0; i < opt.n_images; ++i) {
    const std::uint64_t s = probe_instance_seed(opt.seed, static_cast<std::uint64_t>(i));
    const TowerScene scene = generate_top_block_scene(s, wcfg);
    const Image img = rasterize(scene, cam);

    std::vector<double> row;
    if (feat_kind == ProbeFeatures::EncoderLayer) {
      const EncodeResult enc = encode(img, params);
      row = enc.trace.layers.at(static_cast<std::size_t>(layer));
    } else {
      // Raw RGB of the image row through the displaced block's center: the
      // pixel-level shortcut the stability label rides on.
      const Block& top = scene.displaced();
      const auto [px, py] =
          world_to_pixel(top.x_center, top.y_bottom + 0.5 * top.height, cam);
      (void)px;
      row.resize(static_cast<std::size_t>(img.width) * 3);
      for (int x = 0; x < img.width; ++x) {
        const std::uint8_t* p = img.at(x, py);
        row[static_cast<std::size_t>(x) * 3] = p[0] / 255.0;
        row[static_cast<std::size_t>(x) * 3 + 1] = p[1] / 255.0;
        row[static_cast<std::size_t>(x) * 3 + 2] = p[2] / 255.0;
      }
    }
    if (i == 0) ds.features.resize(opt.n_images, static_cast<int>(row.size()));
    std::copy(row.begin(), row.end(), ds.features.row(i));

    ds.labels[static_cast<std::size_t>(i)] =
        target == ProbeTarget::BinaryStability
            ? (is_stable(scene, wcfg) ? 1.0 : 0.0)
            : displaced_offset(scene);
  }
  if (opt.shuffle_labels) {
    Rng rng(derive_seed(opt.seed, SeedDomain::Shuffle));
    rng.shuffle(ds.labels);
  }
  return ds;
}

}  // namespace

ProbeResult probe(const PolicyParams& params, ProbeTarget target,
                  ProbeFeatures feat_kind, int layer, const ProbeOptions& opt,
                  const WorldConfig& wcfg, const CameraConfig& cam) {
  const ProbeDataset ds = build_probe_dataset(params, target, feat_kind, layer,
                                              opt, wcfg, cam);
  const int n = ds.features.rows;
  const int p = ds.features.cols;

  const std::vector<int> folds =
      target == ProbeTarget::BinaryStability
          ? stratified_folds(ds.labels, opt.folds, opt.seed)
          : plain_folds(n, opt.folds, opt.seed);

  ProbeResult result;
  result.model_tag = opt.model_tag;
  result.target = target;
  result.features = feat_kind;
  result.layer = feat_kind == ProbeFeatures::EncoderLayer ? layer : -1;
  result.shuffled = opt.shuffle_labels;

  for (int fold = 0; fold < opt.folds; ++fold) {
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < n; ++i) {
      (folds[static_cast<std::size_t>(i)] == fold ? test_idx : train_idx).push_back(i);
    }
    DataMatrix xtr;
    xtr.resize(static_cast<int>(train_idx.size()), p);
    std::vector<double> ytr(train_idx.size());
    for (std::size_t r = 0; r < train_idx.size(); ++r) {
      std::copy(ds.features.row(train_idx[r]), ds.features.row(train_idx[r]) + p,
                xtr.row(static_cast<int>(r)));
      ytr[r] = ds.labels[static_cast<std::size_t>(train_idx[r])];
    }

    double metric = 0.0;
    if (target == ProbeTarget::BinaryStability) {
      const LogisticModel m = logistic_fit(xtr, ytr, opt.lambda, 1e-6, 200);
      int correct = 0;
      for (int i : test_idx) {
        const double prob = logistic_prob(m, ds.features.row(i));
        const bool pred = prob >= 0.5;
        const bool truth = ds.labels[static_cast<std::size_t>(i)] > 0.5;
        correct += pred == truth ? 1 : 0;
      }
      metric = static_cast<double>(correct) / static_cast<double>(test_idx.size());
    } else {
      const RidgeModel m = ridge_fit(xtr, ytr, opt.lambda);
      double y_mean = 0.0;
      for (int i : test_idx) y_mean += ds.labels[static_cast<std::size_t>(i)];
      y_mean /= static_cast<double>(test_idx.size());
      double ss_res = 0.0, ss_tot = 0.0;
      for (int i : test_idx) {
        const double y = ds.labels[static_cast<std::size_t>(i)];
        const double pred = ridge_predict(m, ds.features.row(i));
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - y_mean) * (y - y_mean);
      }
      metric = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
    }
    result.fold_metrics.push_back(metric);
  }

  double sum = 0.0;
  for (double m : result.fold_metrics) sum += m;
  result.mean_metric = sum / static_cast<double>(result.fold_metrics.size());
  return result;
}

std::vector<ProbeResult> probe_all_layers(const PolicyParams& params,
                                          ProbeTarget target,
                                          const ProbeOptions& opt,
                                          const WorldConfig& wcfg,
                                          const CameraConfig& cam) {
  std::vector<ProbeResult> out;
  for (int layer = 0; layer < kEncoderLayers; ++layer) {
    out.push_back(probe(params, target, ProbeFeatures::EncoderLayer, layer, opt,
                        wcfg, cam));
  }
  return out;
}

std::string probes_to_csv(const std::vector<ProbeResult>& probes) {
  std::ostringstream out;
  out.precision(10);
  out << "# schema: probes-v1\n";
  out << "model_tag,target,layer,fold,metric\n";
  for (const auto& p : probes) {
    std::string tag = p.model_tag;
    if (p.features == ProbeFeatures::CenterRowPixels) tag += "+center_row_control";
    if (p.shuffled) tag += "+shuffled_labels";
    for (std::size_t fold = 0; fold < p.fold_metrics.size(); ++fold) {
      out << tag << "," << probe_target_name(p.target) << "," << p.layer << ","
          << fold << "," << p.fold_metrics[fold] << "\n";
    }
  }
  return out.str();
}

}  // namespace towerlab
