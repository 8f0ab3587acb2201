// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Symmetric InfoNCE between locomotion embeddings and fused
// (observation + action) embeddings, and the pre-training loop.
//
// For a batch of n pairs with cosine similarity matrix S (rows: locomotion,
// columns: fused) and temperature tau:
//
//   L = sum_i [ -log softmax_row_i(S/tau)_ii  -  log softmax_col_i(S/tau)_ii ]
//
// reported normalized as L / (2n). LossForm::Literal drops the logarithm
// (negative softmax probabilities) for comparison runs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace locoalign::contrastive {

enum class LossForm { InfoNCE, Literal };

/// Row-normalizes both inputs and returns their cosine similarity matrix.
template <typename T>
ad::Tensor<T> similarity_matrix(ad::Tape<T>& tape, const ad::Tensor<T>& vs, const ad::Tensor<T>& vm);

template <typename T>
struct LossTerms {
  ad::Tensor<T> raw;         // L
  ad::Tensor<T> normalized;  // L / (2n)
  double row_mean = 0.0;     // mean locomotion -> fused term
  double col_mean = 0.0;     // mean fused -> locomotion term
};

/// `logit_scale` is a one-element tensor holding ln(1/tau).
template <typename T>
LossTerms<T> contrastive_loss(ad::Tape<T>& tape, const ad::Tensor<T>& sim, const ad::Tensor<T>& logit_scale,
                              LossForm form = LossForm::InfoNCE);

/// Convenience overload with a fixed temperature.
template <typename T>
LossTerms<T> contrastive_loss(ad::Tape<T>& tape, const ad::Tensor<T>& sim, T tau, LossForm form = LossForm::InfoNCE);

struct TrainConfig {
  std::size_t batch = 32;
  std::size_t epochs = 20;
  double base_lr = 1e-4;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.5;  // of total epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool mask_action = false;
  LossForm loss_form = LossForm::InfoNCE;

  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from defaults; keys present in `j` override.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Linear warmup from base_lr (step 0) to peak_lr (step == warmup_steps), then constant.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t warmup_steps);

class Adam {
 public:
  Adam(const model::ParamStore<float>& params, double beta1, double beta2, double eps);
  void step(model::ParamStore<float>& params, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<std::vector<float>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct StepResult {
  double loss_raw = 0.0;
  double loss_norm = 0.0;
  double tau = 0.0;
};

/// One optimizer step on a batch: encode, project, normalize, fuse,
/// similarity, loss, backward, Adam update, temperature clamp.
StepResult train_step(model::Checkpoint& ckpt, Adam& opt, const std::vector<const traj::TripletSample*>& batch, double lr,
                      bool mask_action, LossForm form = LossForm::InfoNCE);

/// Loss of a batch without updating anything.
StepResult evaluate_batch(const model::Checkpoint& ckpt, const std::vector<const traj::TripletSample*>& batch, bool mask_action,
                          LossForm form = LossForm::InfoNCE);

/// Zero action windows standing in for masked control input.
std::vector<float> zero_actions(std::size_t window);

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_raw = 0.0;
  double loss_norm = 0.0;
  double tau = 0.0;
};

struct PretrainResult {
  model::Checkpoint final_ckpt;
  model::Checkpoint best_ckpt;
  std::vector<LossRecord> curve;
  std::vector<double> epoch_loss;  // mean normalized loss per epoch
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Full pre-training run. When `out_dir` is non-empty, writes
/// loss_curve.csv, train_config.json and the final/ and best/ checkpoints.
PretrainResult pretrain(const data::Dataset& ds, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

void write_loss_curve(const std::filesystem::path& path, const std::vector<LossRecord>& curve);
std::vector<LossRecord> read_loss_curve(const std::filesystem::path& path);

}  // namespace locoalign::contrastive
