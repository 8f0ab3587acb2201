// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Encoder branches, fusion head and alignment projections.
//
//   image  --f_obs-->  v_o ─┐
//                           ├─ fuse (2-layer MLP) ─> v_m ─ proj_m ─> l2 ─┐
//   action --f_act-->  v_c ─┘                                            ├─ cosine similarity
//   loco   --f_loco--> v_s ─────────────────────────── proj_s ─> l2 ─────┘
//
// Sequence encoders stack (conv1d -> group_norm -> relu) blocks, mean-pool
// over time and finish with a 2-layer MLP. The locomotion encoder first
// instance-normalizes its input; the per-channel statistics that
// normalization removes are appended to the pooled features so the head still
// sees signal levels. The temperature is stored as logit_scale = ln(1/tau).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core/ops.hpp"
#include "core/trajectory.hpp"

namespace locoalign::model {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  bool operator==(const ConvSpec&) const = default;
};

struct SeqEncoderConfig {
  std::size_t in_channels = 0;
  std::size_t window = 240;
  std::vector<ConvSpec> layers;
  std::size_t groups = 4;
  std::size_t hidden = 256;
  std::size_t out_dim = 128;
  bool normalize_input = false;  // instance norm + statistics pathway
  bool operator==(const SeqEncoderConfig&) const = default;
};

struct ObsEncoderConfig {
  std::size_t height = 16;  // cropped image
  std::size_t width = 32;
  std::vector<ConvSpec> layers;
  std::size_t hidden = 256;
  std::size_t out_dim = 128;
  bool operator==(const ObsEncoderConfig&) const = default;
};

struct ModelConfig {
  ObsEncoderConfig obs;
  SeqEncoderConfig action;
  SeqEncoderConfig loco;
  std::size_t fusion_hidden = 256;
  std::size_t proj_hidden = 256;
  std::size_t out_dim = 128;
  double tau_init = 0.07;
  double tau_min = 5e-3;
  double tau_max = 5.0;

  bool operator==(const ModelConfig&) const = default;

  /// Desk-scale defaults: 4 conv blocks per branch, 128-d features.
  static ModelConfig standard(std::size_t image_height = 16, std::size_t image_width = 32, std::size_t loco_channels = 27,
                              std::size_t window = 240);
  /// Narrow variant with the same topology, sized for exhaustive gradient checks.
  static ModelConfig tiny(std::size_t image_height = 8, std::size_t image_width = 16, std::size_t loco_channels = 27,
                          std::size_t window = 240);

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Ordered, uniquely named parameter tensors.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, ad::Tensor<T> t) {
    require(!index_.contains(name), ErrorKind::Config, "duplicate parameter name '" + name + "'");
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
  }
  const ad::Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Checkpoint, "missing parameter '" + name + "'");
    return items_[it->second].second;
  }
  ad::Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Checkpoint, "missing parameter '" + name + "'");
    return items_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const noexcept { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

  /// Deep copy in another precision; gradients are not copied.
  template <typename U>
  ParamStore<U> cast(bool requires_grad = true) const {
    ParamStore<U> out;
    for (const auto& [name, t] : items_) out.add(name, ad::cast<U>(t, requires_grad));
    return out;
  }
  ParamStore clone() const { return cast<T>(true); }

 private:
  std::vector<std::pair<std::string, ad::Tensor<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  ParamStore<float> params;

  double tau() const;
};

/// Deterministic fan-in-scaled uniform init, zero biases, unit GroupNorm
/// gains, logit_scale = ln(1 / tau_init).
Checkpoint init_params(const ModelConfig& config, std::uint64_t seed);

/// model.bin + model.manifest.json inside `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Same, and additionally rejects a checkpoint whose config differs.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected);

/// Forward passes over a parameter store. Stateless between calls.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, const ParamStore<T>& params) : cfg_(config), p_(params) {}

  const ModelConfig& config() const noexcept { return cfg_; }

  /// images [N,1,H,W] -> [N,out_dim]
  ad::Tensor<T> encode_observation(ad::Tape<T>& tape, const ad::Tensor<T>& images) const;
  /// actions [N,2,window] -> [N,out_dim]
  ad::Tensor<T> encode_action(ad::Tape<T>& tape, const ad::Tensor<T>& actions) const {
    return encode_sequence(tape, "action", cfg_.action, actions);
  }
  /// locomotion [N,C,window] -> [N,out_dim]
  ad::Tensor<T> encode_locomotion(ad::Tape<T>& tape, const ad::Tensor<T>& loco) const {
    return encode_sequence(tape, "loco", cfg_.loco, loco);
  }
  /// concat(v_o, v_c) -> 2-layer MLP -> v_m
  ad::Tensor<T> fuse(ad::Tape<T>& tape, const ad::Tensor<T>& vo, const ad::Tensor<T>& vc) const;
  /// Alignment-space projections (not yet normalized).
  ad::Tensor<T> project_loco(ad::Tape<T>& tape, const ad::Tensor<T>& vs) const { return mlp2(tape, "proj_s", vs); }
  ad::Tensor<T> project_joint(ad::Tape<T>& tape, const ad::Tensor<T>& vm) const { return mlp2(tape, "proj_m", vm); }

  const ad::Tensor<T>& logit_scale() const { return p_.get("logit_scale"); }

 private:
  ad::Tensor<T> encode_sequence(ad::Tape<T>& tape, const std::string& prefix, const SeqEncoderConfig& cfg,
                                const ad::Tensor<T>& x) const;
  ad::Tensor<T> mlp2(ad::Tape<T>& tape, const std::string& prefix, const ad::Tensor<T>& x) const;

  const ModelConfig& cfg_;
  const ParamStore<T>& p_;
};

extern template class Model<float>;
extern template class Model<double>;

// ---------------------------------------------------------------------------
// Batch assembly (plain data, never differentiated)

/// Tile a [frames x channels] sequence until it has `window` rows.
std::vector<float> replicate_pad(const std::vector<float>& seq, std::size_t frames, std::size_t channels, std::size_t window);

template <typename T>
ad::Tensor<T> image_batch(const std::vector<const traj::Image*>& images);
/// Row-major [window x C] sequences -> [N, C, window].
template <typename T>
ad::Tensor<T> sequence_batch(const std::vector<const std::vector<float>*>& seqs, std::size_t window, std::size_t channels);

extern template ad::Tensor<float> image_batch<float>(const std::vector<const traj::Image*>&);
extern template ad::Tensor<double> image_batch<double>(const std::vector<const traj::Image*>&);
extern template ad::Tensor<float> sequence_batch<float>(const std::vector<const std::vector<float>*>&, std::size_t, std::size_t);
extern template ad::Tensor<double> sequence_batch<double>(const std::vector<const std::vector<float>*>&, std::size_t, std::size_t);

}  // namespace locoalign::model
