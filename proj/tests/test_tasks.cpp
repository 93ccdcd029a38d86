#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracle_helpers.hpp"
#include "towerlab/tasks.hpp"

using namespace towerlab;

namespace {
const WorldConfig kCfg;
const RewardConfig kRcfg;

TokenSequence toks(const std::string& s) { return tokens_from_string(s); }
}

TEST_CASE("parse_answer: binary grammar") {
  CHECK(parse_answer(toks("Y END"), TaskKind::BinaryStabilityTop).kind ==
        ParsedAction::Kind::Yes);
  CHECK(parse_answer(toks("N END"), TaskKind::BinaryStabilityTop).kind ==
        ParsedAction::Kind::No);
  CHECK_FALSE(parse_answer(toks("YN END"), TaskKind::BinaryStabilityTop).legal());
  CHECK_FALSE(parse_answer(toks("Y"), TaskKind::BinaryStabilityTop).legal());
  CHECK_FALSE(parse_answer(toks("5 END"), TaskKind::BinaryStabilityTop).legal());
  CHECK_FALSE(parse_answer({}, TaskKind::BinaryStabilityTop).legal());
}

TEST_CASE("parse_answer: x-only grammar and ranges") {
  auto a = parse_answer(toks("-80 END"), TaskKind::XOnlyTop);
  CHECK(a.kind == ParsedAction::Kind::MoveX);
  CHECK(a.dx == -80);
  CHECK(parse_answer(toks("600 END"), TaskKind::XOnlyTop).dx == 600);
  CHECK(parse_answer(toks("-600 END"), TaskKind::XOnlyTop).dx == -600);
  CHECK(parse_answer(toks("0 END"), TaskKind::XOnlySide).dx == 0);

  // malformed
  CHECK_FALSE(parse_answer(toks("-,5 END"), TaskKind::XOnlyTop).legal());
  CHECK_FALSE(parse_answer(toks("- END"), TaskKind::XOnlyTop).legal());
  CHECK_FALSE(parse_answer(toks("--5 END"), TaskKind::XOnlyTop).legal());
  CHECK_FALSE(parse_answer(toks("5,5 END"), TaskKind::XOnlyTop).legal());
  CHECK_FALSE(parse_answer(toks("5"), TaskKind::XOnlyTop).legal());
  CHECK_FALSE(parse_answer(toks("Y END"), TaskKind::XOnlyTop).legal());
  // out of range -> unparseable, not clamped
  CHECK_FALSE(parse_answer(toks("601 END"), TaskKind::XOnlyTop).legal());
  CHECK_FALSE(parse_answer(toks("999 END"), TaskKind::XOnlyTop).legal());
  // more than three digits is malformed for x-only
  CHECK_FALSE(parse_answer(toks("0600 END"), TaskKind::XOnlyTop).legal());
}

TEST_CASE("parse_answer: x-y grammar and ranges") {
  auto a = parse_answer(toks("12,700 END"), TaskKind::XYSide);
  CHECK(a.kind == ParsedAction::Kind::MoveXY);
  CHECK(a.dx == 12);
  CHECK(a.dy == 700);
  CHECK(parse_answer(toks("-600,1000 END"), TaskKind::XYSide).legal());
  CHECK(parse_answer(toks("-550,600 END"), TaskKind::XYSide).dy == 600);

  CHECK_FALSE(parse_answer(toks("601,5 END"), TaskKind::XYSide).legal());
  CHECK_FALSE(parse_answer(toks("5,1001 END"), TaskKind::XYSide).legal());
  CHECK_FALSE(parse_answer(toks("5,-1 END"), TaskKind::XYSide).legal());
  CHECK_FALSE(parse_answer(toks("5 END"), TaskKind::XYSide).legal());
  CHECK_FALSE(parse_answer(toks("5,5,5 END"), TaskKind::XYSide).legal());
  CHECK_FALSE(parse_answer(toks("5, END"), TaskKind::XYSide).legal());
  CHECK_FALSE(parse_answer(toks(",5 END"), TaskKind::XYSide).legal());
}

TEST_CASE("reward: pinned branch values") {
  // binary: -1 / 0 / 1
  TaskInstance bin = make_instance(TaskKind::BinaryStabilityTop, 3, kCfg);
  CHECK(reward(bin, ParsedAction::unparseable(), kCfg, kRcfg) == -1.0);
  const ParsedAction right = bin.stable ? ParsedAction::yes() : ParsedAction::no();
  const ParsedAction wrong = bin.stable ? ParsedAction::no() : ParsedAction::yes();
  CHECK(reward(bin, right, kCfg, kRcfg) == 1.0);
  CHECK(reward(bin, wrong, kCfg, kRcfg) == 0.0);

  // x-only: optimal action earns exactly 20
  TaskInstance xo = make_instance(TaskKind::XOnlyTop, 5, kCfg);
  const int dx = static_cast<int>(std::lround(xo.optimal.dx));
  CHECK(reward(xo, ParsedAction::move_x(dx), kCfg, kRcfg) == 20.0);
  CHECK(reward(xo, ParsedAction::unparseable(), kCfg, kRcfg) == -5.0);

  // unstable result at d = 1 block width: 2/e - 2
  TaskInstance xs = make_instance(TaskKind::XOnlySide, 6, kCfg);
  const int d1 = static_cast<int>(std::lround(xs.optimal.dx)) + 200;
  CHECK(reward(xs, ParsedAction::move_x(d1), kCfg, kRcfg) ==
        doctest::Approx(-1.2642411176571153).epsilon(1e-12));

  // x-y: below floor -4, unparseable -5, optimal exactly 20
  TaskInstance xy = make_instance(TaskKind::XYSide, 7, kCfg);
  CHECK(reward(xy, ParsedAction::move_xy(0, -5), kCfg, kRcfg) == -4.0);
  CHECK(reward(xy, ParsedAction::unparseable(), kCfg, kRcfg) == -5.0);
  const int odx = static_cast<int>(std::lround(xy.optimal.dx));
  const int ody = static_cast<int>(std::lround(xy.optimal.dy));
  CHECK(reward(xy, ParsedAction::move_xy(odx, ody), kCfg, kRcfg) == 20.0);

  // within tower: 2 e^{-d^2} - 4 <= -2
  const int into_dx = odx;
  const int into_dy = ody > 0 ? ody - 100 : 0;
  const double r_within = reward(xy, ParsedAction::move_xy(into_dx, into_dy), kCfg, kRcfg);
  CHECK(r_within <= -2.0);
  CHECK(r_within > -4.0);
}

TEST_CASE("reward matches the independent formula evaluator") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (TaskKind task : {TaskKind::BinaryStabilityTop, TaskKind::XOnlyTop,
                          TaskKind::XOnlySide, TaskKind::XYSide}) {
      const TaskInstance inst = make_instance(task, seed, kCfg);
      Rng rng(derive_seed(seed, SeedDomain::Shuffle, static_cast<std::uint64_t>(task)));
      for (int k = 0; k < 25; ++k) {
        ParsedAction action;
        switch (static_cast<int>(rng.uniform_int(0, 5))) {
          case 0: action = ParsedAction::unparseable(); break;
          case 1: action = random_legal_action(task, rng); break;
          default:
            if (task == TaskKind::XYSide) {
              action = ParsedAction::move_xy(static_cast<int>(rng.uniform_int(-700, 700)),
                                             static_cast<int>(rng.uniform_int(-200, 1100)));
            } else if (task_is_action(task)) {
              action = ParsedAction::move_x(static_cast<int>(rng.uniform_int(-700, 700)));
            } else {
              action = rng.bernoulli(0.5) ? ParsedAction::yes() : ParsedAction::no();
            }
        }
        const double got = reward(inst, action, kCfg, kRcfg);
        const double want = oracle::reward_formula(inst, action, kCfg, kRcfg);
        CHECK(std::abs(got - want) <= 1e-12);
        ++checked;
      }
    }
  }
  CHECK(checked == 5000);
}

TEST_CASE("reward bounds per task") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const TaskInstance bin = make_instance(TaskKind::BinaryStabilityTop, seed, kCfg);
    for (const ParsedAction& a : {ParsedAction::yes(), ParsedAction::no(),
                                  ParsedAction::unparseable()}) {
      const double r = reward(bin, a, kCfg, kRcfg);
      CHECK((r == -1.0 || r == 0.0 || r == 1.0));
    }

    const TaskInstance xo = make_instance(TaskKind::XOnlyTop, seed, kCfg);
    Rng rng(derive_seed(seed, SeedDomain::Shuffle, 9));
    for (int k = 0; k < 50; ++k) {
      const double r = reward(
          xo, ParsedAction::move_x(static_cast<int>(rng.uniform_int(-600, 600))),
          kCfg, kRcfg);
      CHECK(r > -2.0);
      CHECK(r <= 20.0);
    }
    const TaskInstance xy = make_instance(TaskKind::XYSide, seed, kCfg);
    for (int k = 0; k < 50; ++k) {
      const double r = reward(
          xy,
          ParsedAction::move_xy(static_cast<int>(rng.uniform_int(-600, 600)),
                                static_cast<int>(rng.uniform_int(0, 1000))),
          kCfg, kRcfg);
      CHECK(r > -4.0);  // below-floor unreachable with legal dy
      CHECK(r <= 20.0);
    }
  }
}

TEST_CASE("reward is strictly decreasing in d within a branch") {
  const TaskInstance xo = make_instance(TaskKind::XOnlyTop, 11, kCfg);
  const int opt = static_cast<int>(std::lround(xo.optimal.dx));
  // stable branch: distances 0..90 from optimal stay inside the support
  double prev = reward(xo, ParsedAction::move_x(opt), kCfg, kRcfg);
  for (int e = 10; e <= 90; e += 10) {
    const double r = reward(xo, ParsedAction::move_x(opt + e), kCfg, kRcfg);
    CHECK(r < prev);
    prev = r;
  }
  // unstable branch
  prev = reward(xo, ParsedAction::move_x(opt + 150), kCfg, kRcfg);
  for (int e = 200; e <= 500; e += 50) {
    const double r = reward(xo, ParsedAction::move_x(opt + e), kCfg, kRcfg);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("sft_target: rendering and max-reward round trip") {
  // binary renders the label
  TaskInstance bin = make_instance(TaskKind::BinaryStabilityTop, 13, kCfg);
  const TokenSequence bt = sft_target(bin);
  REQUIRE(bt.size() == 2);
  CHECK(bt[1] == kTokEnd);
  CHECK(bt[0] == (bin.stable ? kTokYes : kTokNo));
  CHECK(reward(bin, parse_answer(bt, bin.task), kCfg, kRcfg) == 1.0);

  // top offset +80 -> "-80 END"
  TaskInstance xo = make_instance(TaskKind::XOnlyTop, 17, kCfg);
  xo.scene.blocks.back().x_center = xo.scene.tower_center_x() + 80.0;
  xo.optimal = optimal_action(xo.scene, kCfg);
  CHECK(tokens_to_string(sft_target(xo)) == "-80 END");

  // brute force over the whole legal action grid: target reward is maximal
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const TaskInstance inst = make_instance(TaskKind::XOnlyTop, seed, kCfg);
    const double target_r = reward(inst, parse_answer(sft_target(inst), inst.task), kCfg, kRcfg);
    CHECK(target_r == 20.0);
    double best = -1e9;
    for (int dx = kXMin; dx <= kXMax; ++dx) {
      best = std::max(best, reward(inst, ParsedAction::move_x(dx), kCfg, kRcfg));
    }
    CHECK(target_r >= best);
  }
  // x-y: stride the grid (full grid is 1.2M cells; stride 7 keeps the property
  // check meaningful and the optimum is included exactly by construction)
  for (std::uint64_t seed = 30; seed < 33; ++seed) {
    const TaskInstance inst = make_instance(TaskKind::XYSide, seed, kCfg);
    const double target_r = reward(inst, parse_answer(sft_target(inst), inst.task), kCfg, kRcfg);
    CHECK(target_r == 20.0);
    double best = -1e9;
    for (int dx = kXMin; dx <= kXMax; dx += 7) {
      for (int dy = kYMin; dy <= kYMax; dy += 7) {
        best = std::max(best, reward(inst, ParsedAction::move_xy(dx, dy), kCfg, kRcfg));
      }
    }
    CHECK(target_r >= best);
  }
}

TEST_CASE("baseline_reward: binary sits at one half") {
  const BaselineEstimate est =
      baseline_reward(TaskKind::BinaryStabilityTop, kCfg, kRcfg, 10000, 1);
  CHECK(est.mean == doctest::Approx(0.5).epsilon(0.02));
  CHECK(est.std_error < 0.01);
  CHECK(est.ci_low < est.mean);
  CHECK(est.ci_high > est.mean);
}

TEST_CASE("baseline_reward: action tasks are reproducible and bounded") {
  for (TaskKind task : {TaskKind::XOnlyTop, TaskKind::XOnlySide, TaskKind::XYSide}) {
    const BaselineEstimate a = baseline_reward(task, kCfg, kRcfg, 10000, 2);
    const BaselineEstimate b = baseline_reward(task, kCfg, kRcfg, 10000, 2);
    CHECK(a.mean == b.mean);
    CHECK(a.mean > -5.0);
    CHECK(a.mean < 20.0);
  }
}

TEST_CASE("reward grid CSV covers the audit surface") {
  const TaskInstance xo = make_instance(TaskKind::XOnlyTop, 2, kCfg);
  const std::string csv = reward_grid_csv(xo, kCfg, kRcfg, 100);
  CHECK(csv.find("dx,reward") == 0);
  CHECK(csv.find("\n-600,") != std::string::npos);
  CHECK(csv.find("\n600,") != std::string::npos);

  const TaskInstance xy = make_instance(TaskKind::XYSide, 2, kCfg);
  const std::string grid = reward_grid_csv(xy, kCfg, kRcfg, 200);
  CHECK(grid.find("dy\\dx") == 0);
}
