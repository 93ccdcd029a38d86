#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "oracle_helpers.hpp"
#include "towerlab/policy.hpp"
#include "towerlab/render.hpp"

using namespace towerlab;

namespace {
const WorldConfig kCfg;
const CameraConfig kCam;

PolicyParams fresh_params(std::uint64_t seed = 0) {
  return PolicyParams::init(PolicyConfig{}, seed);
}

Image top_image(std::uint64_t seed) {
  return rasterize(generate_top_block_scene(seed, kCfg), kCam);
}
}

TEST_CASE("parameter budget and layout") {
  const PolicyParams p = fresh_params();
  CHECK(p.size() < 1000000);
  CHECK(p.size() > 10000);
  for (double v : p.w) CHECK(std::isfinite(v));
}

TEST_CASE("encode: determinism, totality, distinctness") {
  const PolicyParams p = fresh_params();
  const Image img = top_image(1);
  const EncodeResult a = encode(img, p);
  const EncodeResult b = encode(img, p);
  CHECK(a.features == b.features);
  REQUIRE(a.trace.layers.size() == kEncoderLayers);

  // all-background image still yields finite features
  TowerScene empty;
  empty.displaced_index = -1;
  const EncodeResult bg = encode(rasterize(empty, kCam), p);
  for (double v : bg.features) CHECK(std::isfinite(v));

  // activations bounded (tanh layers) on generated scenes
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const EncodeResult e = encode(top_image(seed), p);
    for (std::size_t layer = 1; layer < e.trace.layers.size(); ++layer) {
      for (double v : e.trace.layers[layer]) {
        CHECK(std::abs(v) <= 1.0);
      }
    }
  }

  // scenes differing only in the top-block offset produce different features
  TowerScene s1 = generate_top_block_scene(3, kCfg);
  TowerScene s2 = s1;
  s2.blocks.back().x_center += 40.0;
  const EncodeResult e1 = encode(rasterize(s1, kCam), p);
  const EncodeResult e2 = encode(rasterize(s2, kCam), p);
  double diff = 0.0;
  for (std::size_t i = 0; i < e1.features.size(); ++i) {
    diff += std::abs(e1.features[i] - e2.features[i]);
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("decoder: next-token distribution normalizes at every step") {
  const PolicyParams p = fresh_params(2);
  const Image img = top_image(4);
  const EncodeCache enc = encode_forward(p, img);
  const TokenSequence tokens = tokens_from_string("-123 END");
  const DecoderRun run = decoder_forward(p, enc.features, TaskKind::XOnlyTop, tokens);
  REQUIRE(run.steps.size() == tokens.size());
  for (const auto& step : run.steps) {
    double total = 0.0;
    for (double lp : step.logp) total += std::exp(lp);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-8));
  }
  CHECK(run.logprob <= 0.0);
}

TEST_CASE("sample_completions: determinism and recorded log-probs") {
  const PolicyParams p = fresh_params(3);
  const Image img = top_image(5);

  const CompletionBatch a = sample_completions(img, TaskKind::XOnlyTop, p, 8, 1.0, 77);
  const CompletionBatch b = sample_completions(img, TaskKind::XOnlyTop, p, 8, 1.0, 77);
  REQUIRE(a.completions.size() == 8);
  for (std::size_t i = 0; i < a.completions.size(); ++i) {
    CHECK(a.completions[i].tokens == b.completions[i].tokens);
    CHECK(a.completions[i].logps == b.completions[i].logps);
  }

  // recorded log-prob equals recomputed log-prob at temperature 1
  const EncodeCache enc = encode_forward(p, img);
  for (const auto& c : a.completions) {
    const DecoderRun run = decoder_forward(p, enc.features, TaskKind::XOnlyTop, c.tokens);
    REQUIRE(c.logps.size() == c.tokens.size());
    double recorded = 0.0;
    for (double lp : c.logps) recorded += lp;
    CHECK(std::abs(recorded - run.logprob) <= 1e-10);
    for (std::size_t t = 0; t < c.tokens.size(); ++t) {
      CHECK(std::abs(c.logps[t] - run.steps[t].logp[c.tokens[t]]) <= 1e-10);
    }
    CHECK(c.tokens.size() <= static_cast<std::size_t>(p.cfg.max_len));
    const bool ended = c.tokens.back() == kTokEnd;
    const bool truncated = c.tokens.size() == static_cast<std::size_t>(p.cfg.max_len);
    CHECK((ended || truncated));
  }
}

TEST_CASE("temperature to zero approaches greedy decoding") {
  const PolicyParams p = fresh_params(4);
  const Image img = top_image(6);
  const TokenSequence greedy = greedy_decode(img, TaskKind::XOnlyTop, p);
  const CompletionBatch batch =
      sample_completions(img, TaskKind::XOnlyTop, p, 8, 1e-6, 99);
  for (const auto& c : batch.completions) {
    CHECK(c.tokens == greedy);
  }
}

TEST_CASE("logprob_and_grad matches central finite differences") {
  const PolicyParams p = fresh_params(5);
  const Image img = top_image(7);
  const TaskKind task = TaskKind::XOnlyTop;
  const TokenSequence tokens = tokens_from_string("-142 END");

  const GradResult res = logprob_and_grad(tokens, img, task, p);
  CHECK(res.logprob <= 0.0);
  REQUIRE(res.grad.size() == p.size());

  auto f = [&](const std::vector<double>& w) {
    PolicyParams q = p;
    q.w = w;
    return sequence_logprob(tokens, img, task, q);
  };

  Rng rng(123);
  int checked = 0;
  double worst = 0.0;
  while (checked < 64) {
    const auto i = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(p.size()) - 1));
    const double fd = oracle::central_difference(f, p.w, i, 1e-5);
    const double a = res.grad[i];
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
    const double rel = std::abs(a - fd) / denom;
    worst = std::max(worst, rel);
    CHECK(rel <= 1e-4);
    ++checked;
  }
  INFO("worst relative error ", worst);
  CHECK(checked == 64);
}

TEST_CASE("gradient covers every tensor that participated") {
  const PolicyParams p = fresh_params(6);
  const Image img = top_image(8);
  const GradResult res =
      logprob_and_grad(tokens_from_string("12,300 END"), img, TaskKind::XYSide, p);
  double nonzero = 0;
  for (double g : res.grad) nonzero += g != 0.0 ? 1 : 0;
  // encoder, decoder, embeddings all present
  CHECK(nonzero > static_cast<double>(p.size()) / 2);
}

TEST_CASE("phase state machine tracks the grammar") {
  PhaseState ph;
  double f[kPhaseDim];
  ph.features(f, TaskKind::XYSide);
  CHECK(f[0] == 1.0);  // at start
  CHECK(f[6] == 1.0);  // another integer still expected

  ph.feed(kTokMinus, TaskKind::XYSide);
  ph.feed(5, TaskKind::XYSide);
  ph.features(f, TaskKind::XYSide);
  CHECK(f[2] == 1.0);
  CHECK(f[3] == 1.0);
  CHECK(f[5] == 0.0);

  ph.feed(kTokComma, TaskKind::XYSide);
  ph.features(f, TaskKind::XYSide);
  CHECK(f[5] == 1.0);  // now in the second integer
  CHECK(f[6] == 0.0);  // nothing further expected
  CHECK(f[7] == 0.0);

  ph.feed(kTokComma, TaskKind::XYSide);  // second comma is malformed
  ph.features(f, TaskKind::XYSide);
  CHECK(f[7] == 1.0);

  // x-only never accepts a comma
  PhaseState xo;
  xo.feed(4, TaskKind::XOnlyTop);
  xo.feed(kTokComma, TaskKind::XOnlyTop);
  xo.features(f, TaskKind::XOnlyTop);
  CHECK(f[7] == 1.0);
}

TEST_CASE("checkpoint round trip and hash mismatch refusal") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "towerlab_ckpt_test.bin").string();

  Checkpoint ckpt;
  ckpt.params = fresh_params(9);
  ckpt.adam_m.assign(ckpt.params.size(), 0.25);
  ckpt.adam_v.assign(ckpt.params.size(), 0.5);
  ckpt.adam_t = 7;
  ckpt.global_step = 42;
  save_checkpoint(path, ckpt);

  const Checkpoint back = load_checkpoint(path, ckpt.params.cfg);
  CHECK(back.params.w == ckpt.params.w);
  CHECK(back.adam_m == ckpt.adam_m);
  CHECK(back.adam_v == ckpt.adam_v);
  CHECK(back.adam_t == 7);
  CHECK(back.global_step == 42);

  PolicyConfig other;
  other.max_len = 16;  // long-generation variant has a different hash
  CHECK(other.arch_hash() != ckpt.params.cfg.arch_hash());
  CHECK_THROWS(load_checkpoint(path, other));
  fs::remove(path);
}

TEST_CASE("greedy decode is deterministic and grammar-shaped sequences parse") {
  const PolicyParams p = fresh_params(10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image img = top_image(seed + 30);
    const TokenSequence a = greedy_decode(img, TaskKind::BinaryStabilityTop, p);
    const TokenSequence b = greedy_decode(img, TaskKind::BinaryStabilityTop, p);
    CHECK(a == b);
    CHECK(a.size() <= static_cast<std::size_t>(p.cfg.max_len));
  }
}
