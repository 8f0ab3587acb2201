// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Dynamics prediction: given m seconds of locomotion history and the next n
// seconds of control actions, predict the next n seconds of pose
// (x, y, z, qx, qy, qz, qw).
//
// Everything is expressed in the local frame of the last history pose, so
// every rollout starts from the identity pose. Learned predictors output
// per-step pose differentials, which are accumulated into absolute poses
// (positions summed, quaternions summed component-wise and renormalized).
//
// The learned predictor is a GRU over future actions whose initial hidden
// state is an affine map of the frozen locomotion embedding of the
// replicate-padded history (optionally concatenated with the last-frame
// motion channels).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace locoalign::tasks {

using Pose = std::array<double, 7>;
inline constexpr Pose kIdentityPose{0, 0, 0, 0, 0, 0, 1};

/// How quaternion differentials are formed. Additive: d = q_t - q_{t-1},
/// accumulated by adding and renormalizing. Relative: d = conj(q_{t-1}) q_t,
/// accumulated by composition.
enum class QuatDiff { Additive, Relative };
const char* quat_diff_name(QuatDiff m) noexcept;
QuatDiff parse_quat_diff(const std::string& s);

/// `diffs` is steps x 7. Returns steps x 7 absolute poses.
std::vector<double> rollout_accumulate(const Pose& initial, const std::vector<double>& diffs, QuatDiff mode = QuatDiff::Additive);
/// Inverse of rollout_accumulate; positions are d_t = p_t - p_{t-1} with p_{-1} = initial.
std::vector<double> pose_differentials(const Pose& initial, const std::vector<double>& poses, QuatDiff mode = QuatDiff::Additive);

/// sqrt(mean of squared differences); shapes must agree.
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);

struct PoseErrors {
  double joint = 0.0;       // over all 7 dims
  double position = 0.0;    // x, y, z
  double quaternion = 0.0;  // qx, qy, qz, qw
  std::vector<double> per_step;  // joint RMSE at each horizon step
};

/// `pred` and `truth` are samples x steps x 7.
PoseErrors pose_errors(const std::vector<double>& pred, const std::vector<double>& truth, std::size_t steps);

struct KbmParams {
  double wheelbase = 2.5;
  double a_max = 3.0;
  double drag = 0.5;
  double max_steer = 0.5;
  double wheel_radius = 0.3;

  nlohmann::json to_json() const;
  static KbmParams from_json(const nlohmann::json& j);
};

struct KbmState {
  double x = 0.0, y = 0.0, z = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

/// Kinematic bicycle rollout. `actions` is steps x 2 (throttle, steering);
/// each step integrates the heading exactly along a circular arc at the
/// current speed, then updates the speed. Returns steps x 7 poses.
std::vector<double> kbm_baseline(const KbmState& init, const std::vector<float>& actions, const KbmParams& params, double dt);

struct PredictorConfig {
  double history_s = 2.0;
  double horizon_s = 2.0;
  std::size_t hidden = 32;
  std::size_t epochs = 240;
  std::size_t batch = 64;
  double lr = 1e-3;
  bool hidden_init = true;      // false: h0 = 0
  bool state_features = false;  // append last-frame motion channels to the h0 input
  bool freeze_encoder = true;   // false trains the locomotion encoder jointly
  QuatDiff quat_diff = QuatDiff::Additive;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PredictorConfig from_json(const nlohmann::json& j);
};

struct DynamicsSample {
  std::vector<float> history;  // replicate-padded to the encoder window, window x C
  std::vector<float> state;    // last history frame, non-pose channels
  std::vector<float> actions;  // steps x 2
  std::vector<double> truth;   // steps x 7, local frame
  double v0 = 0.0;             // speed from wheel RPM at the last history frame
};

struct DynamicsSet {
  std::vector<DynamicsSample> samples;
  std::size_t steps = 0;
  std::size_t window = 0;
  std::size_t channels = 0;
  double dt = 0.0;

  std::vector<double> truth() const;  // samples x steps x 7
};

DynamicsSet make_dynamics_set(const data::Dataset& ds, const PredictorConfig& cfg, double wheel_radius);

/// Per-dimension affine standardization. Dimensions that are constant in the
/// fitted rows keep unit scale and always invert to their mean.
struct Standardizer {
  std::vector<double> mean, scale;
  std::vector<bool> constant;

  static Standardizer fit(const std::vector<double>& rows, std::size_t dim);
  float apply(double v, std::size_t d) const { return static_cast<float>((v - mean[d]) / scale[d]); }
  double invert(double v, std::size_t d) const { return constant[d] ? mean[d] : v * scale[d] + mean[d]; }
};

struct Predictor {
  PredictorConfig config;
  model::ParamStore<float> params;
  Standardizer embedding, state, target;
  std::optional<model::Checkpoint> encoder;  // tuned copy when the encoder was not frozen
  std::vector<double> epoch_loss;
};

Predictor train_dynamics_predictor(const model::Checkpoint& encoder, const DynamicsSet& train, const PredictorConfig& cfg);

/// Absolute local-frame poses, samples x steps x 7.
std::vector<double> predict_poses(const Predictor& p, const model::Checkpoint& encoder, const DynamicsSet& set);
std::vector<double> kbm_poses(const DynamicsSet& set, const KbmParams& params);

enum class Baseline { Pretrained, Scratch, Kbm };
const char* baseline_name(Baseline b) noexcept;
Baseline parse_baseline(const std::string& s);

struct DynamicsReport {
  std::string baseline;
  std::size_t samples = 0;
  std::size_t steps = 0;
  double dt = 0.0;
  PoseErrors errors;
  std::vector<double> train_loss;  // per epoch, empty for KBM
};

/// Trains (unless KBM) on `train` and scores on `test`. Scratch uses a
/// randomly initialized encoder of the same architecture, frozen like the
/// pretrained one.
DynamicsReport run_dynamics(Baseline b, const model::Checkpoint& pretrained, const data::Dataset& train, const data::Dataset& test,
                            const PredictorConfig& cfg, const KbmParams& kbm);

/// dynamics_<baseline>.jsonl, _summary.csv and _per_step.csv.
void write_dynamics_report(const std::filesystem::path& dir, const DynamicsReport& r);

}  // namespace locoalign::tasks
