// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/embed.hpp"

#include <algorithm>

#include <json.hpp>

#include "core/contrastive.hpp"
#include "core/io.hpp"

namespace locoalign::tasks {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void append(std::vector<float>& dst, const ad::Tensor<float>& t) { dst.insert(dst.end(), t.data().begin(), t.data().end()); }

}  // namespace

Embeddings embed_dataset(const model::Checkpoint& ckpt, const data::Dataset& ds, bool mask_action, std::size_t batch) {
  require(batch >= 1, ErrorKind::Config, "embed_dataset: batch must be positive");
  const auto& cfg = ckpt.config;
  model::Model<float> net(cfg, ckpt.params);
  Embeddings e;
  e.n = ds.size();
  e.dim = cfg.out_dim;
  const auto zeros = contrastive::zero_actions(cfg.action.window);
  for (std::size_t begin = 0; begin < ds.size(); begin += batch) {
    const std::size_t end = std::min(ds.size(), begin + batch);
    std::vector<const traj::Image*> imgs;
    std::vector<const std::vector<float>*> acts, locos;
    for (std::size_t i = begin; i < end; ++i) {
      imgs.push_back(&ds.samples[i].o);
      acts.push_back(mask_action ? &zeros : &ds.samples[i].c);
      locos.push_back(&ds.samples[i].s);
    }
    ad::Tape<float> tape(false);
    auto vo = net.encode_observation(tape, model::image_batch<float>(imgs));
    auto vc = net.encode_action(tape, model::sequence_batch<float>(acts, cfg.action.window, 2));
    auto vs = net.encode_locomotion(tape, model::sequence_batch<float>(locos, cfg.loco.window, cfg.loco.in_channels));
    auto vm = net.fuse(tape, vo, vc);
    append(e.vo, vo);
    append(e.vc, vc);
    append(e.vs, vs);
    append(e.vm, vm);
    append(e.zs, ad::l2_normalize(tape, net.project_loco(tape, vs)));
    append(e.zm, ad::l2_normalize(tape, net.project_joint(tape, vm)));
  }
  return e;
}

std::vector<float> encode_locomotion(const model::Checkpoint& ckpt, const std::vector<const std::vector<float>*>& seqs,
                                     std::size_t batch) {
  require(batch >= 1, ErrorKind::Config, "encode_locomotion: batch must be positive");
  const auto& cfg = ckpt.config;
  model::Model<float> net(cfg, ckpt.params);
  std::vector<float> out;
  out.reserve(seqs.size() * cfg.out_dim);
  for (std::size_t begin = 0; begin < seqs.size(); begin += batch) {
    const std::size_t end = std::min(seqs.size(), begin + batch);
    std::vector<const std::vector<float>*> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(begin),
                                                 seqs.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Tape<float> tape(false);
    append(out, net.encode_locomotion(tape, model::sequence_batch<float>(chunk, cfg.loco.window, cfg.loco.in_channels)));
  }
  return out;
}

void export_embeddings(const fs::path& dir, const data::Dataset& ds, const Embeddings& e, bool mask_action) {
  require(e.n == ds.size(), ErrorKind::Dimension, "export_embeddings: table does not match dataset");
  io::ensure_dir(dir);
  const std::size_t d = e.dim;
  std::vector<float> rows;
  rows.reserve(e.n * 4 * d);
  json samples = json::array();
  for (std::size_t i = 0; i < e.n; ++i) {
    for (const auto* block : {&e.vo, &e.vc, &e.vs, &e.vm})
      rows.insert(rows.end(), block->begin() + static_cast<std::ptrdiff_t>(i * d),
                  block->begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    samples.push_back({{"source_id", ds.samples[i].source_id}, {"t0", ds.samples[i].t0}});
  }
  json j;
  j["version"] = 1;
  j["count"] = e.n;
  j["dim"] = d;
  j["columns"] = {"v_o", "v_c", "v_s", "v_m"};
  j["mask_action"] = mask_action;
  j["blob"] = {{"file", "embeddings.f32"}, {"bytes", rows.size() * 4}, {"row_floats", 4 * d}};
  j["samples"] = std::move(samples);
  io::write_f32(dir / "embeddings.f32", rows);
  io::write_text(dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace locoalign::tasks
