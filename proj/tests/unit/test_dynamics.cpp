// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <doctest.h>

#include "core/dynamics.hpp"
#include "helpers.hpp"

using namespace locoalign;
using namespace locoalign::tasks;

namespace {

constexpr double kDt = 1.0 / 40.0;

/// Float-valued random walk of unit-quaternion poses.
std::vector<double> random_poses(std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out;
  double x = 0, y = 0, z = 0, yaw = 0, pitch = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    x += rng.uniform(-0.3, 0.5);
    y += rng.uniform(-0.3, 0.3);
    z += rng.uniform(-0.05, 0.05);
    yaw += rng.uniform(-0.1, 0.1);
    pitch += rng.uniform(-0.02, 0.02);
    const double cy = std::cos(yaw / 2), sy = std::sin(yaw / 2), cp = std::cos(pitch / 2), sp = std::sin(pitch / 2);
    const double q[4] = {-sy * sp, cy * sp, sy * cp, cy * cp};
    out.insert(out.end(), {double(float(x)), double(float(y)), double(float(z))});
    for (double c : q) out.push_back(double(float(c)));
  }
  return out;
}

/// A straight drive at constant speed `v` and heading `heading`, sampled as a
/// dataset window (pose and wheel RPM filled in, other channels zero).
traj::TripletSample constant_drive(double v, double heading, double x0, double y0, const KbmParams& kbm) {
  const auto map = traj::ChannelMap::standard();
  const std::size_t c = map.width(), window = 240;
  traj::TripletSample s;
  s.window = window;
  s.loco_channels = c;
  s.o = {8, 16, std::vector<float>(128, 0.5f)};
  s.s.assign(window * c, 0.0f);
  const std::size_t pose = map.offset_of("pose"), rpm = map.offset_of("rpm");
  const double rpm_value = v * 60.0 / (2.0 * std::numbers::pi * kbm.wheel_radius);
  for (std::size_t f = 0; f < window; ++f) {
    float* row = s.s.data() + f * c;
    row[pose] = static_cast<float>(x0 + v * kDt * f * std::cos(heading));
    row[pose + 1] = static_cast<float>(y0 + v * kDt * f * std::sin(heading));
    row[pose + 2] = 1.0f;
    row[pose + 5] = static_cast<float>(std::sin(heading / 2));
    row[pose + 6] = static_cast<float>(std::cos(heading / 2));
    for (std::size_t k = 0; k < 4; ++k) row[rpm + k] = static_cast<float>(rpm_value);
    s.c.push_back(static_cast<float>(kbm.drag * v / kbm.a_max));
    s.c.push_back(0.0f);
  }
  return s;
}

data::Dataset constant_dataset(std::size_t n, std::uint64_t seed, bool vary_speed) {
  Rng rng(seed);
  KbmParams kbm;
  std::vector<traj::TripletSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = vary_speed ? rng.uniform(0.5, 5.0) : 2.0;
    samples.push_back(constant_drive(v, rng.uniform(-3.0, 3.0), rng.uniform(0, 100), rng.uniform(0, 100), kbm));
  }
  return data::make_dataset(samples, "train", seed);
}

PredictorConfig quick_config() {
  PredictorConfig p;
  p.epochs = 40;
  p.hidden = 8;
  p.batch = 16;
  p.lr = 5e-3;
  return p;
}

}  // namespace

TEST_CASE("rmse of a single unit error over one pose") {
  CHECK(std::abs(rmse({0, 0, 0, 0, 0, 0, 0}, {1, 0, 0, 0, 0, 0, 0}) - 0.3780) <= 1e-4);
  CHECK(rmse({1, 2}, {1, 2}) == 0.0);
  CHECK(testutil::error_kind([] { rmse({1}, {1, 2}); }) == ErrorKind::Dimension);
}

TEST_CASE("pose error blocks compose the joint error") {
  const auto a = random_poses(12, 1), b = random_poses(12, 2);
  const auto e = pose_errors(a, b, 6);
  CHECK(e.joint == doctest::Approx(rmse(a, b)));
  CHECK(7 * e.joint * e.joint == doctest::Approx(3 * e.position * e.position + 4 * e.quaternion * e.quaternion));
  REQUIRE(e.per_step.size() == 6);
  double sq = 0;
  for (double r : e.per_step) sq += r * r;
  CHECK(std::sqrt(sq / 6) == doctest::Approx(e.joint));
}

TEST_CASE("accumulating ground-truth differentials reproduces the poses") {
  for (auto mode : {QuatDiff::Additive, QuatDiff::Relative}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto poses = random_poses(80, seed);
      const auto back = rollout_accumulate(kIdentityPose, pose_differentials(kIdentityPose, poses, mode), mode);
      REQUIRE(back.size() == poses.size());
      double qerr = 0;
      bool positions_exact = true;
      for (std::size_t t = 0; t < 80; ++t) {
        for (std::size_t k = 0; k < 3; ++k) positions_exact &= back[t * 7 + k] == poses[t * 7 + k];
        double n = 0;
        for (std::size_t k = 3; k < 7; ++k) n += poses[t * 7 + k] * poses[t * 7 + k];
        for (std::size_t k = 3; k < 7; ++k) qerr = std::max(qerr, std::abs(back[t * 7 + k] - poses[t * 7 + k] / std::sqrt(n)));
      }
      CHECK(positions_exact);
      CHECK(qerr <= 1e-5);
    }
  }
}

TEST_CASE("rollout keeps quaternions unit and starts from the initial pose") {
  Rng rng(3);
  std::vector<double> diffs(20 * 7);
  for (auto& d : diffs) d = rng.uniform(-0.2, 0.2);
  for (auto mode : {QuatDiff::Additive, QuatDiff::Relative}) {
    const auto poses = rollout_accumulate(kIdentityPose, diffs, mode);
    for (std::size_t t = 0; t < 20; ++t) {
      double n = 0;
      for (std::size_t k = 3; k < 7; ++k) n += poses[t * 7 + k] * poses[t * 7 + k];
      CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }
    // The null differential is zero for positions; for quaternions it is zero
    // when added and the identity rotation when composed.
    std::vector<double> null(7 * 3, 0.0);
    if (mode == QuatDiff::Relative)
      for (std::size_t t = 0; t < 3; ++t) null[t * 7 + 6] = 1.0;
    const auto zero = rollout_accumulate(kIdentityPose, null, mode);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < 7; ++k) CHECK(zero[t * 7 + k] == kIdentityPose[k]);
  }
  CHECK(testutil::error_kind([] { rollout_accumulate({0, 0, 0, 0, 0, 0, 2}, std::vector<double>(7)); }) == ErrorKind::Degenerate);
  CHECK(testutil::error_kind([] { rollout_accumulate(kIdentityPose, std::vector<double>(6)); }) == ErrorKind::Dimension);
  CHECK(parse_quat_diff("relative") == QuatDiff::Relative);
  CHECK(testutil::error_kind([] { parse_quat_diff("slerp"); }) == ErrorKind::Config);
}

TEST_CASE("bicycle model drives straight lines and stands still") {
  KbmParams p;
  KbmState s;
  s.speed = 2.0;
  const double thr = p.drag * 2.0 / p.a_max;
  std::vector<float> actions;
  for (int i = 0; i < 40; ++i) actions.insert(actions.end(), {static_cast<float>(thr), 0.0f});
  const auto line = kbm_baseline(s, actions, p, kDt);
  for (std::size_t t = 0; t < 40; ++t) {
    CHECK(line[t * 7] == doctest::Approx(2.0 * kDt * (t + 1)).epsilon(1e-6));
    CHECK(line[t * 7 + 1] == 0.0);
    CHECK(line[t * 7 + 6] == 1.0);
  }
  const auto still = kbm_baseline(KbmState{}, std::vector<float>(80, 0.0f), p, kDt);
  for (double v : std::vector<double>(still.begin(), still.end() - 1)) CHECK((v == 0.0 || v == 1.0));
  // Throttle from rest accelerates towards a_max / drag.
  std::vector<float> full;
  for (int i = 0; i < 400; ++i) full.insert(full.end(), {1.0f, 0.0f});
  const auto run = kbm_baseline(KbmState{}, full, p, kDt);
  const double late_speed = (run[399 * 7] - run[398 * 7]) / kDt;
  CHECK(late_speed < p.a_max / p.drag);
  CHECK(late_speed > 0.9 * p.a_max / p.drag);
}

TEST_CASE("bicycle model at constant steering traces a circle of radius L / tan(delta)") {
  KbmParams p;
  const double v = 3.0, steer = 0.4;
  const double radius = p.wheelbase / std::tan(steer * p.max_steer);
  KbmState s;
  s.speed = v;
  std::vector<float> actions;
  for (int i = 0; i < 400; ++i) actions.insert(actions.end(), {static_cast<float>(p.drag * v / p.a_max), static_cast<float>(steer)});
  const auto poses = kbm_baseline(s, actions, p, kDt);
  // Centre lies at (0, R) for a left turn starting at the origin heading +x.
  for (std::size_t t = 0; t < 400; ++t) {
    const double dx = poses[t * 7], dy = poses[t * 7 + 1] - radius;
    CHECK(std::hypot(dx, dy) == doctest::Approx(radius).epsilon(0.01));
  }
  CHECK(testutil::error_kind([] { KbmParams::from_json({{"wheelbase", -1.0}}); }) == ErrorKind::Config);
}

TEST_CASE("dynamics samples are expressed in the last history frame") {
  const auto ds = constant_dataset(6, 1, true);
  const auto set = make_dynamics_set(ds, PredictorConfig{}, 0.3);
  CHECK(set.steps == 80);
  CHECK(set.dt == kDt);
  REQUIRE(set.samples.size() == 6);
  for (const auto& s : set.samples) {
    CHECK(s.history.size() == 240 * 27);
    CHECK(s.actions.size() == 160);
    CHECK(s.v0 > 0.5);
    for (std::size_t t = 0; t < set.steps; ++t) {
      CHECK(s.truth[t * 7] == doctest::Approx(s.v0 * kDt * (t + 1)).epsilon(1e-3));
      CHECK(std::abs(s.truth[t * 7 + 1]) < 1e-3);
      CHECK(std::abs(s.truth[t * 7 + 2]) < 1e-6);
      CHECK(s.truth[t * 7 + 6] == doctest::Approx(1.0));
    }
    // History is the first 2 s tiled to fill the window.
    for (std::size_t k = 0; k < 27; ++k) CHECK(s.history[80 * 27 + k] == s.history[k]);
  }
  PredictorConfig too_long;
  too_long.horizon_s = 5.0;
  CHECK(testutil::error_kind([&] { make_dynamics_set(ds, too_long, 0.3); }) == ErrorKind::Config);
}

TEST_CASE("bicycle model is exact on constant-speed straight drives") {
  const auto set = make_dynamics_set(constant_dataset(5, 2, true), PredictorConfig{}, 0.3);
  CHECK(rmse(kbm_poses(set, KbmParams{}), set.truth()) < 1e-4);
}

TEST_CASE("standardizer marks constant dimensions and inverts them to the mean") {
  const auto s = Standardizer::fit({1, 5, 3, 5, 5, 5}, 2);
  CHECK(s.mean[0] == doctest::Approx(3.0));
  CHECK_FALSE(s.constant[0]);
  CHECK(s.constant[1]);
  CHECK(s.invert(123.0, 1) == 5.0);
  CHECK(s.invert(s.apply(4.0, 0), 0) == doctest::Approx(4.0));
}

TEST_CASE("predictor reproduces constant-velocity targets") {
  const auto ds = constant_dataset(12, 3, false);
  const auto enc = model::init_params(model::ModelConfig::tiny(8, 16, 27, 240), 1);
  auto cfg = quick_config();
  cfg.epochs = 2;
  const auto set = make_dynamics_set(ds, cfg, 0.3);
  const auto p = train_dynamics_predictor(enc, set, cfg);
  CHECK(p.epoch_loss.size() == 2);
  CHECK(rmse(predict_poses(p, enc, set), set.truth()) < 1e-4);
}

TEST_CASE("hidden-state initialization helps when the history sets the speed") {
  const auto train = make_dynamics_set(constant_dataset(48, 4, true), quick_config(), 0.3);
  const auto test = make_dynamics_set(constant_dataset(16, 5, true), quick_config(), 0.3);
  const auto enc = model::init_params(model::ModelConfig::tiny(8, 16, 27, 240), 2);
  auto with = quick_config();
  with.state_features = true;
  auto without = with;
  without.hidden_init = false;
  const auto a = train_dynamics_predictor(enc, train, with);
  const auto b = train_dynamics_predictor(enc, train, without);
  const double ea = rmse(predict_poses(a, enc, test), test.truth());
  const double eb = rmse(predict_poses(b, enc, test), test.truth());
  INFO("with " << ea << " without " << eb);
  CHECK(ea <= eb);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());

  const auto again = train_dynamics_predictor(enc, train, with);
  bool same = true;
  auto it = again.params.begin();
  for (const auto& [name, t] : a.params) {
    for (std::size_t i = 0; i < t.numel(); ++i) same &= t.at(i) == it->second.at(i);
    ++it;
  }
  CHECK(same);
}

TEST_CASE("dynamics configs and reports") {
  PredictorConfig p;
  p.quat_diff = QuatDiff::Relative;
  p.hidden = 5;
  CHECK(PredictorConfig::from_json(p.to_json()).to_json() == p.to_json());
  CHECK(parse_baseline("kbm") == Baseline::Kbm);
  CHECK(testutil::error_kind([] { parse_baseline("oracle"); }) == ErrorKind::Usage);

  DynamicsReport r;
  r.baseline = "scratch";
  r.samples = 2;
  r.steps = 3;
  r.dt = kDt;
  r.errors = pose_errors(random_poses(6, 1), random_poses(6, 2), 3);
  r.train_loss = {1.0, 0.5};
  const auto dir = testutil::temp_dir("dyn_report");
  write_dynamics_report(dir, r);
  for (const char* f : {"dynamics_scratch.jsonl", "dynamics_scratch_summary.csv", "dynamics_scratch_per_step.csv",
                        "dynamics_scratch_train_loss.csv"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
}
