// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "core/trajectory.hpp"
#include "../common/drives.hpp"
#include "helpers.hpp"

using namespace locoalign;
using namespace locoalign::traj;

using testutil::make_drive;
using testutil::stream;

TEST_CASE("constant signals resample with zero error") {
  const auto drive = make_drive(7.3, [](double, std::size_t c) { return 0.1f * static_cast<float>(c) + 1.7f; });
  const auto s = synchronize(drive);
  REQUIRE(s.loco.channels == 27);
  const auto map = ChannelMap::standard();
  const std::size_t reserved = map.offset_of("reserved");
  for (std::size_t f = 0; f < s.loco.frames(); ++f)
    for (std::size_t c = 0; c < 27; ++c) {
      const float expected = c >= reserved ? 0.0f : 0.1f * static_cast<float>(c) + 1.7f;
      REQUIRE(s.loco.at(f, c) - expected == 0.0f);
    }
}

TEST_CASE("synchronized grid has lo-rate spacing") {
  const auto s = synchronize(make_drive(5.0, [](double t, std::size_t) { return static_cast<float>(t); }));
  CHECK(s.loco.frames() == 200);
  for (std::size_t i = 1; i < s.loco.frames(); ++i) CHECK(std::abs(s.loco.timestamps[i] - s.loco.timestamps[i - 1] - 0.025) < 1e-6);
  CHECK(s.action.timestamps == s.loco.timestamps);
  CHECK(s.obs.frames() >= 50);
}

TEST_CASE("block averaging of a linear ramp lands on the block centre") {
  const auto s = synchronize(make_drive(3.0, [](double t, std::size_t) { return static_cast<float>(t); }));
  // Samples k/400 for k in [10j, 10j+9] average to j/40 + 9/800.
  for (std::size_t j = 0; j < s.loco.frames(); ++j) CHECK(s.loco.at(j, 0) == doctest::Approx(j / 40.0 + 9.0 / 800.0).epsilon(1e-5));
}

TEST_CASE("actions are held, never interpolated") {
  auto drive = make_drive(4.0, [](double, std::size_t) { return 0.0f; });
  for (std::size_t i = 0; i < drive.action.frames(); ++i) drive.action.values[i * 2] = (i % 2) ? 1.0f : 0.0f;
  const auto s = synchronize(drive);
  // 20 Hz holds span two 40 Hz frames exactly.
  for (std::size_t j = 0; j + 1 < s.action.frames(); ++j) CHECK(s.action.at(j, 0) == static_cast<float>((j / 2) % 2));
}

TEST_CASE("10 s trajectory yields exactly 3 triplets, 30 s yields 13") {
  auto f = [](double t, std::size_t c) { return static_cast<float>(std::cos(t + c)); };
  CHECK(window_triplets(synchronize(make_drive(10.0, f))).size() == 3);
  CHECK(window_triplets(synchronize(make_drive(30.0, f))).size() == 13);
}

TEST_CASE("triplet counts follow floor((T - 6) / 2) + 1 over a randomized sweep") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const double duration = 6.0 + rng.uniform(0.0, 20.0);
    const auto s = synchronize(make_drive(duration, [](double t, std::size_t) { return static_cast<float>(t); }));
    const auto got = window_triplets(s).size();
    const auto expected = static_cast<std::size_t>(std::floor((s.duration() - 6.0) / 2.0 + 1e-9)) + 1;
    INFO("duration " << duration);
    CHECK(got == expected);
    CHECK(got == triplet_count(s.loco.frames(), 240, 80));
  }
  CHECK(triplet_count(239, 240, 80) == 0);
  CHECK(triplet_count(240, 240, 80) == 1);
}

TEST_CASE("triplets carry the right slices and the first camera frame at or after t0") {
  const auto drive = make_drive(12.0, [](double t, std::size_t c) { return static_cast<float>(t * 10 + c); });
  const auto s = synchronize(drive);
  const auto trip = window_triplets(s);
  REQUIRE(trip.size() == 4);
  for (std::size_t k = 0; k < trip.size(); ++k) {
    const auto& tr = trip[k];
    CHECK(tr.window == 240);
    CHECK(tr.loco_channels == 27);
    CHECK(tr.s.size() == 240 * 27);
    CHECK(tr.c.size() == 240 * 2);
    CHECK(tr.t0 == doctest::Approx(2.0 * k));
    CHECK(tr.s[0] == s.loco.at(80 * k, 0));
    CHECK(tr.c[2 * 239 + 1] == s.action.at(80 * k + 239, 1));
    // Camera frame index 20k holds pixels 2000k + p; the crop keeps rows 2..3.
    CHECK(tr.o.height == 2);
    CHECK(tr.o.width == 3);
    CHECK(tr.o.pixels[0] == static_cast<float>(20 * k * 100 + 6));
  }
}

TEST_CASE("lower-half crop") {
  Image even{4, 2, {0, 1, 2, 3, 4, 5, 6, 7}};
  CHECK(crop_lower_half(even) == Image{2, 2, {4, 5, 6, 7}});
  Image odd{3, 1, {0, 1, 2}};
  const auto c = crop_lower_half(odd);
  CHECK(c.height == 2);
  CHECK(c.pixels.back() == 2.0f);
}

TEST_CASE("malformed streams are rejected") {
  auto f = [](double, std::size_t) { return 0.0f; };
  auto bad = make_drive(8.0, f);
  std::swap(bad.loco[0].timestamps[3], bad.loco[0].timestamps[4]);
  CHECK(testutil::error_kind([&] { synchronize(bad); }) == ErrorKind::Format);

  auto disjoint = make_drive(8.0, f);
  for (auto& t : disjoint.action.timestamps) t += 100.0;
  CHECK(testutil::error_kind([&] { synchronize(disjoint); }) == ErrorKind::Alignment);

  auto missing = make_drive(8.0, f);
  missing.loco.pop_back();
  CHECK(testutil::error_kind([&] { synchronize(missing); }) == ErrorKind::Format);

  SyncOptions odd;
  odd.lo_hz = 37;
  CHECK(testutil::error_kind([&] { synchronize(make_drive(8.0, f), odd); }) == ErrorKind::Config);
}

TEST_CASE("standard channel map is 27 wide") {
  const auto m = ChannelMap::standard();
  CHECK(m.width() == 27);
  CHECK(m.offset_of("pose") == 0);
  CHECK(m.offset_of("rpm") == 17);
  CHECK(testutil::error_kind([&] { (void)m.offset_of("nope"); }) == ErrorKind::Config);
}
