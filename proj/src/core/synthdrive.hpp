// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic off-road driving logs.
//
// A patchwork terrain assigns every region a class; each class owns a
// disjoint roughness band and a texture. A vehicle driven by a random
// piecewise-constant policy follows bicycle kinematics at hi_hz:
//
//   v     <- v + (a_max * (1 - 0.5 r) * throttle - c_d * v) dt
//   theta <- theta + (v / L_wb) tan(steer * delta_max) dt
//
// Roughness r(x, y) enters only through that slip factor and through the
// sensor noise (sigma = sigma0 + k_r * r * v on vertical acceleration), so the
// camera view of the terrain plus the throttle profile jointly predict the
// inertial signature of a window.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core/dataset.hpp"
#include "core/trajectory.hpp"

namespace locoalign::synth {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t trajectories = 200;
  double test_fraction = 0.25;
  double duration_s = 30.0;

  // Terrain
  double world_size = 400.0;  // square side, meters
  double cell_size = 2.0;
  std::size_t classes = 4;
  std::size_t regions = 64;
  std::vector<std::pair<double, double>> roughness_bands;  // empty: default bands

  // Vehicle
  double a_max = 3.0;
  double drag = 0.5;
  double wheelbase = 2.5;
  double max_steer = 0.5;  // rad
  double wheel_radius = 0.3;
  double track = 1.5;
  double v0_max = 2.0;

  // Sensors
  double sigma0 = 0.05;
  double k_r = 0.5;
  double shock_tau = 0.05;  // s
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  double view_m = 12.0;  // extent of the rendered patch ahead of the vehicle
  double pixel_noise = 0.02;

  // Rates (Hz). Every sensor rate must divide hi_hz.
  double hi_hz = 400.0;
  double pose_hz = 50.0;
  double imu_hz = 400.0;
  double shock_hz = 50.0;
  double rpm_hz = 50.0;
  double action_hz = 20.0;
  double cam_hz = 10.0;

  // Policy
  double segment_min_s = 1.0;
  double segment_max_s = 3.0;

  void validate() const;
  std::vector<std::pair<double, double>> bands() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

class TerrainField {
 public:
  TerrainField() = default;
  TerrainField(double world_size, double cell_size, std::size_t classes, std::vector<std::pair<double, double>> bands,
               std::size_t cols, std::vector<std::uint8_t> cls, std::vector<float> roughness, std::uint64_t texture_seed);

  double world_size() const noexcept { return world_size_; }
  double cell_size() const noexcept { return cell_size_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t cols() const noexcept { return cols_; }
  const std::vector<std::pair<double, double>>& bands() const noexcept { return bands_; }
  bool inside(double x, double y) const noexcept;
  /// Nearest-cell lookups; points outside the world clamp to the border.
  double roughness(double x, double y) const;
  std::size_t class_at(double x, double y) const;
  /// Procedural grey level in [0, 1] of the terrain surface at (x, y).
  double texture(double x, double y) const;
  const std::vector<float>& roughness_grid() const noexcept { return roughness_; }
  const std::vector<std::uint8_t>& class_grid() const noexcept { return class_; }

 private:
  std::size_t cell_index(double x, double y) const;

  double world_size_ = 0.0;
  double cell_size_ = 1.0;
  std::size_t classes_ = 0;
  std::vector<std::pair<double, double>> bands_;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> class_;
  std::vector<float> roughness_;
  std::uint64_t texture_seed_ = 0;
};

/// Voronoi patchwork of `cfg.regions` regions with random classes.
TerrainField generate_terrain(std::uint64_t seed, const SynthConfig& cfg);

struct VehicleState {
  double x = 0.0, y = 0.0, z = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

/// Yaw-only unit quaternion (qx, qy, qz, qw).
std::array<double, 4> yaw_quaternion(double heading);

struct Policy {
  std::vector<double> switch_times;  // segment start times, first is 0
  std::vector<double> throttle;
  std::vector<double> steering;

  /// Piecewise-constant controls within the valid ranges.
  static Policy random(std::uint64_t seed, double duration_s, double min_s, double max_s);
  static Policy constant(double throttle, double steering);
  std::pair<double, double> at(double t) const;
};

struct GenerateOptions {
  bool random_start = true;
  VehicleState start;  // used when random_start is false
};

/// Simulates one drive. Leaving the world truncates the log.
traj::Trajectory generate_trajectory(const TerrainField& terrain, const SynthConfig& cfg, std::uint64_t policy_seed,
                                     const std::string& source_id, const GenerateOptions& opts = {});
traj::Trajectory generate_trajectory(const TerrainField& terrain, const SynthConfig& cfg, const Policy& policy,
                                     std::uint64_t noise_seed, const std::string& source_id, const GenerateOptions& opts);

/// Writes <out>/train, <out>/test and <out>/synth_config.json. When
/// `raw_dir` is non-empty the raw drives are also written there.
data::SplitResult generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out,
                             const std::filesystem::path& raw_dir = {});

}  // namespace locoalign::synth
