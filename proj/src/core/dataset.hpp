// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk triplet datasets. One directory per split:
//
//   manifest.json  version, counts, dims, rates, channel map, seed, samples
//   obs.f32        count x H x W
//   loco.f32       count x window x loco_channels
//   act.f32        count x window x 2
//
// Blobs are raw little-endian binary32, row-major, sample-major.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "core/trajectory.hpp"

namespace locoalign::data {

inline constexpr int kDatasetVersion = 1;

struct DatasetManifest {
  int version = kDatasetVersion;
  std::string split = "train";
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::size_t image_height = 0;  // after the lower-half crop
  std::size_t image_width = 0;
  std::size_t window = 240;
  std::size_t loco_channels = 27;
  std::size_t action_channels = 2;
  double lo_hz = 40.0;
  double cam_hz = 10.0;
  traj::ChannelMap channel_map = traj::ChannelMap::standard();
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<traj::TripletSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
};

/// Builds a manifest from samples (dims taken from the first sample).
Dataset make_dataset(std::vector<traj::TripletSample> samples, const std::string& split, std::uint64_t seed,
                     const traj::ChannelMap& map = traj::ChannelMap::standard(), double lo_hz = 40.0, double cam_hz = 10.0);

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Windows of one drive, ready for splitting.
struct DriveWindows {
  std::string source_id;
  std::vector<traj::TripletSample> samples;
};

/// synchronize + window_triplets for one raw drive.
DriveWindows prepare_drive(const traj::Trajectory& t, const traj::SyncOptions& sync = {},
                           const traj::WindowOptions& window = {});

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Splits by drive, never by window. The test split takes
/// round(n * test_fraction) drives, clamped to [1, n-1] when n >= 2. Samples
/// keep drive order, so each split is ordered by (source_id, t0) when the
/// drives are.
SplitResult split_drives(std::vector<DriveWindows> drives, double test_fraction, std::uint64_t seed,
                         const traj::SyncOptions& sync = {});

/// Writes <out>/train and <out>/test.
void save_split(const std::filesystem::path& out, const SplitResult& split);

}  // namespace locoalign::data
