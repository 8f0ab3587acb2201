// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-built raw drives with closed-form channel values.

#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "core/trajectory.hpp"

namespace testutil {

using namespace locoalign::traj;

inline ModalityStream stream(const std::string& name, double rate, std::size_t channels, double duration, Interp interp,
                      const std::function<float(double, std::size_t)>& f) {
  ModalityStream s;
  s.name = name;
  s.rate_hz = rate;
  s.channels = channels;
  s.interp = interp;
  const auto frames = static_cast<std::size_t>(std::llround(duration * rate)) + 1;
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / rate;
    s.timestamps.push_back(t);
    for (std::size_t c = 0; c < channels; ++c) s.values.push_back(f(t, c));
  }
  return s;
}

/// Standard sensor suite where every channel returns `f(t, global_channel)`.
inline Trajectory make_drive(double duration, const std::function<float(double, std::size_t)>& f, const std::string& id = "drive") {
  Trajectory t;
  t.source_id = id;
  const struct {
    const char* name;
    double rate;
    std::size_t ch, offset;
  } spec[] = {{"pose", 50, 7, 0}, {"angvel", 400, 3, 7}, {"linacc", 400, 3, 10}, {"shock", 50, 4, 13}, {"rpm", 50, 4, 17}};
  for (const auto& s : spec)
    t.loco.push_back(stream(s.name, s.rate, s.ch, duration, Interp::Linear,
                            [&, off = s.offset](double tt, std::size_t c) { return f(tt, off + c); }));
  t.action = stream("action", 20, 2, duration, Interp::Hold, [](double tt, std::size_t c) {
    return c == 0 ? 0.5f : static_cast<float>(std::sin(tt));
  });
  t.obs.rate_hz = 10;
  t.obs.height = 4;
  t.obs.width = 3;
  const auto frames = static_cast<std::size_t>(std::llround(duration * 10)) + 1;
  for (std::size_t i = 0; i < frames; ++i) {
    t.obs.timestamps.push_back(static_cast<double>(i) / 10.0);
    for (std::size_t p = 0; p < 12; ++p) t.obs.pixels.push_back(static_cast<float>(i * 100 + p));
  }
  return t;
}

}  // namespace testutil
