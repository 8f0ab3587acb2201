// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-rate driving logs and the preparation pipeline that turns them into
// aligned triplet samples:
//
//   raw streams (any rates) --synchronize--> loco/action at lo_hz, camera at cam_hz
//                           --window_triplets--> <image, window x 27, window x 2>
//
// Synchronization upsamples every locomotion and action channel onto a common
// hi_hz grid (linear interpolation for continuous sensors, zero-order hold for
// control actions), then averages non-overlapping blocks of hi_hz/lo_hz
// samples. The grid starts at the beginning of the common time interval.

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace locoalign::traj {

enum class Interp { Linear, Hold };

struct ModalityStream {
  std::string name;
  double rate_hz = 0.0;
  std::size_t channels = 0;
  std::vector<double> timestamps;  // seconds, strictly increasing
  std::vector<float> values;       // frames x channels, row-major
  Interp interp = Interp::Linear;

  std::size_t frames() const noexcept { return timestamps.size(); }
  float at(std::size_t frame, std::size_t ch) const { return values[frame * channels + ch]; }
};

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // row-major, height x width

  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool operator==(const Image&) const = default;
};

struct ImageStream {
  double rate_hz = 0.0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> timestamps;
  std::vector<float> pixels;  // frames x height x width

  std::size_t frames() const noexcept { return timestamps.size(); }
  Image frame(std::size_t i) const;
};

/// Named slices that make up the locomotion vector. An entry whose name starts
/// with "reserved" is zero-filled; every other entry must match a raw stream.
struct ChannelMap {
  std::vector<std::pair<std::string, std::size_t>> entries;

  std::size_t width() const;
  /// pose(7) + angvel(3) + linacc(3) + shock(4) + rpm(4) + reserved(6) = 27.
  static ChannelMap standard();
  /// Offset of the first channel of `name` in the locomotion vector.
  std::size_t offset_of(const std::string& name) const;
};

/// Raw log: locomotion arrives as several sensor streams at their own rates.
struct Trajectory {
  std::string source_id;
  ImageStream obs;
  std::vector<ModalityStream> loco;
  ModalityStream action;  // throttle in [0,1], steering in [-1,1]
};

struct SyncedTrajectory {
  std::string source_id;
  ImageStream obs;
  ModalityStream loco;    // lo_hz, channel_map.width() channels
  ModalityStream action;  // lo_hz, 2 channels, same timestamps as loco
  double lo_hz = 40.0;

  double duration() const { return static_cast<double>(loco.frames()) / lo_hz; }
};

struct SyncOptions {
  double hi_hz = 400.0;
  double lo_hz = 40.0;
  double cam_hz = 10.0;
  ChannelMap channel_map = ChannelMap::standard();
};

SyncedTrajectory synchronize(const Trajectory& traj, const SyncOptions& opts = {});

struct TripletSample {
  Image o;                // lower-half crop of the first frame at or after t0
  std::vector<float> s;   // window x loco_channels
  std::vector<float> c;   // window x 2
  std::size_t window = 0;
  std::size_t loco_channels = 0;
  std::string source_id;
  double t0 = 0.0;

  bool operator==(const TripletSample&) const = default;
};

struct WindowOptions {
  double window_s = 6.0;
  double stride_s = 2.0;
};

/// floor((frames - window) / stride) + 1 triplets, or none if too short.
std::vector<TripletSample> window_triplets(const SyncedTrajectory& traj, const WindowOptions& opts = {});

/// Closed-form triplet count for a trajectory of `frames` lo-rate frames.
std::size_t triplet_count(std::size_t frames, std::size_t window, std::size_t stride);

/// Rows [H/2, H). Odd heights get one duplicated top row first.
Image crop_lower_half(const Image& image);

}  // namespace locoalign::traj
