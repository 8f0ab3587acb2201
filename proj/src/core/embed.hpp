// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Batched inference over a dataset and the embedding table export.

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace locoalign::tasks {

/// Row-major [n x dim] blocks, one row per dataset sample.
struct Embeddings {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> vo, vc, vs, vm;  // encoder / fusion outputs
  std::vector<float> zs, zm;          // projected and l2-normalized
};

/// `mask_action` feeds zero action windows, as in the mask-a ablation.
Embeddings embed_dataset(const model::Checkpoint& ckpt, const data::Dataset& ds, bool mask_action, std::size_t batch = 64);

/// Locomotion encoder outputs for arbitrary [window x C] sequences.
std::vector<float> encode_locomotion(const model::Checkpoint& ckpt, const std::vector<const std::vector<float>*>& seqs,
                                     std::size_t batch = 64);

/// embeddings.f32 ([v_o | v_c | v_s | v_m] per row) + manifest.json.
void export_embeddings(const std::filesystem::path& dir, const data::Dataset& ds, const Embeddings& e, bool mask_action);

}  // namespace locoalign::tasks
