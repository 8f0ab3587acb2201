// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Raw multi-rate drive logs on disk, the input of the prepare step:
//
//   <dir>/trajectory.json   version, source_id and the stream table
//   <dir>/<stream>.ts.f64   timestamps, little-endian binary64
//   <dir>/<stream>.f32      frames x channels (camera: frames x H x W)
//
// A stream entry is {name, rate_hz, channels, interp: "linear"|"hold"}; the
// camera entry carries height and width instead of channels.

#pragma once

#include <filesystem>
#include <vector>

#include "core/trajectory.hpp"

namespace locoalign::traj {

inline constexpr int kRawLogVersion = 1;

void save_raw_trajectory(const std::filesystem::path& dir, const Trajectory& t);
Trajectory load_raw_trajectory(const std::filesystem::path& dir);

/// Subdirectories of `root` that hold a trajectory.json, sorted by name.
std::vector<std::filesystem::path> list_raw_trajectories(const std::filesystem::path& root);

}  // namespace locoalign::traj
