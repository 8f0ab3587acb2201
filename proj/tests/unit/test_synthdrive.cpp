// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <iterator>

#include <doctest.h>

#include "core/synthdrive.hpp"
#include "helpers.hpp"

using namespace locoalign;
using namespace locoalign::synth;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.trajectories = 6;
  c.duration_s = 8.0;
  c.world_size = 120.0;
  c.regions = 12;
  c.image_height = 16;
  c.image_width = 16;
  return c;
}

const traj::ModalityStream& stream(const traj::Trajectory& t, const std::string& name) {
  for (const auto& s : t.loco)
    if (s.name == name) return s;
  FAIL("missing stream " << name);
  return t.action;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("terrain classes own disjoint roughness bands") {
  const auto cfg = small_config();
  const auto t = generate_terrain(7, cfg);
  const auto bands = cfg.bands();
  REQUIRE(bands.size() == cfg.classes);
  for (std::size_t i = 1; i < bands.size(); ++i) CHECK(bands[i - 1].second <= bands[i].first);
  const auto& cls = t.class_grid();
  const auto& r = t.roughness_grid();
  REQUIRE(cls.size() == r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(cls[i] < cfg.classes);
    CHECK(r[i] >= bands[cls[i]].first - 1e-6);
    CHECK(r[i] <= bands[cls[i]].second + 1e-6);
  }
  for (double x : {-5.0, 0.0, 60.0, 500.0}) {
    const double tex = t.texture(x, 30.0);
    CHECK(tex >= 0.0);
    CHECK(tex <= 1.0);
  }
  // Lookups outside the world clamp to the border.
  CHECK(t.roughness(-50.0, 1.0) == t.roughness(0.0, 1.0));
}

TEST_CASE("terrain is a pure function of the seed") {
  const auto cfg = small_config();
  const auto a = generate_terrain(3, cfg), b = generate_terrain(3, cfg), c = generate_terrain(4, cfg);
  CHECK(a.roughness_grid() == b.roughness_grid());
  CHECK(a.class_grid() == b.class_grid());
  CHECK(a.roughness_grid() != c.roughness_grid());
}

TEST_CASE("random policies stay within control ranges") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = Policy::random(seed, 30.0, 1.0, 3.0);
    REQUIRE(!p.switch_times.empty());
    CHECK(p.switch_times.front() == 0.0);
    for (std::size_t i = 0; i < p.throttle.size(); ++i) {
      CHECK(p.throttle[i] >= 0.0);
      CHECK(p.throttle[i] <= 1.0);
      CHECK(std::abs(p.steering[i]) <= 1.0);
    }
    for (std::size_t i = 1; i < p.switch_times.size(); ++i) {
      const double len = p.switch_times[i] - p.switch_times[i - 1];
      CHECK(len >= 1.0 - 1e-9);
      CHECK(len <= 3.0 + 1e-9);
    }
  }
  const auto c = Policy::constant(0.4, -0.2);
  CHECK(c.at(17.3) == std::pair{0.4, -0.2});
}

TEST_CASE("drives are deterministic, finite and sampled at the configured rates") {
  const auto cfg = small_config();
  const auto terrain = generate_terrain(1, cfg);
  const auto a = generate_trajectory(terrain, cfg, 42, "d0");
  const auto b = generate_trajectory(terrain, cfg, 42, "d0");
  CHECK(a.obs.pixels == b.obs.pixels);
  for (std::size_t i = 0; i < a.loco.size(); ++i) CHECK(a.loco[i].values == b.loco[i].values);

  const auto& pose = stream(a, "pose");
  CHECK(pose.channels == 7);
  for (std::size_t i = 1; i < pose.frames(); ++i)
    CHECK(pose.timestamps[i] - pose.timestamps[i - 1] == doctest::Approx(1.0 / cfg.pose_hz));
  for (std::size_t i = 0; i < pose.frames(); ++i) {
    double n = 0;
    for (std::size_t k = 3; k < 7; ++k) n += pose.at(i, k) * pose.at(i, k);
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (const auto& s : a.loco)
    for (float v : s.values) CHECK(std::isfinite(v));
  for (std::size_t i = 0; i < a.action.frames(); ++i) {
    CHECK(a.action.at(i, 0) >= 0.0f);
    CHECK(a.action.at(i, 0) <= 1.0f);
    CHECK(std::abs(a.action.at(i, 1)) <= 1.0f);
  }
  CHECK(a.obs.frames() == static_cast<std::size_t>(cfg.duration_s * cfg.cam_hz) + 1);
  CHECK(a.obs.pixels.size() == a.obs.frames() * cfg.image_height * cfg.image_width);
}

TEST_CASE("straight drive from rest follows the longitudinal dynamics") {
  auto cfg = small_config();
  cfg.sigma0 = 1e-12;
  cfg.k_r = 0.0;
  const auto terrain = generate_terrain(2, cfg);
  GenerateOptions opts;
  opts.random_start = false;
  opts.start = {20.0, 60.0, 0.0, 0.0, 0.0};
  const auto t = generate_trajectory(terrain, cfg, Policy::constant(1.0, 0.0), 0, "line", opts);
  const auto& pose = stream(t, "pose");
  const auto& rpm = stream(t, "rpm");
  for (std::size_t i = 0; i < pose.frames(); ++i) {
    CHECK(pose.at(i, 1) == doctest::Approx(60.0));
    CHECK(pose.at(i, 5) == 0.0f);
  }
  // Roughness slows the vehicle, so speed stays under the smooth-ground terminal value.
  const double terminal = cfg.a_max / cfg.drag;
  const double to_speed = 2.0 * std::numbers::pi * cfg.wheel_radius / 60.0;
  double last = 0.0;
  for (std::size_t i = 0; i < rpm.frames(); ++i) {
    last = rpm.at(i, 0) * to_speed;
    CHECK(last >= 0.0);
    CHECK(last <= terminal + 1e-4);
    CHECK(rpm.at(i, 0) == rpm.at(i, 1));
  }
  CHECK(last > 1.0);
}

TEST_CASE("synthesis config validation and JSON roundtrip") {
  auto cfg = small_config();
  CHECK(SynthConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  cfg.imu_hz = 300.0;
  CHECK(testutil::error_kind([&] { cfg.validate(); }) == ErrorKind::Config);
  cfg = small_config();
  cfg.test_fraction = 1.5;
  CHECK(testutil::error_kind([&] { cfg.validate(); }) == ErrorKind::Config);
  CHECK(testutil::error_kind([] { SynthConfig::from_json({{"a_max", "fast"}}); }) == ErrorKind::Config);
}

TEST_CASE("dataset generation is reproducible from the seed") {
  const auto cfg = small_config();
  const auto d1 = testutil::temp_dir("synth_a"), d2 = testutil::temp_dir("synth_b");
  const auto a = generate_dataset(cfg, d1);
  const auto b = generate_dataset(cfg, d2);
  CHECK(a.train.size() > 0);
  CHECK(a.test.size() > 0);
  CHECK(a.train_ids == b.train_ids);
  CHECK(a.test_ids == b.test_ids);
  for (const auto& id : a.test_ids) CHECK(std::find(a.train_ids.begin(), a.train_ids.end(), id) == a.train_ids.end());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), d1);
    CHECK_MESSAGE(slurp(entry.path()) == slurp(d2 / rel), rel.string());
  }
  CHECK(a.train.samples.front().o.height == cfg.image_height / 2);
}
