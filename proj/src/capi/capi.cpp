// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "locoalign/locoalign.h"

#include <cstring>
#include <new>
#include <string>

#include <json.hpp>

#include "core/contrastive.hpp"
#include "core/dataset.hpp"
#include "core/dynamics.hpp"
#include "core/embed.hpp"
#include "core/error.hpp"
#include "core/model.hpp"
#include "core/plot.hpp"
#include "core/rawlog.hpp"
#include "core/retrieval.hpp"
#include "core/synthdrive.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace locoalign;

struct la_dataset {
  data::Dataset ds;
};

struct la_model {
  model::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

la_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage:
    case ErrorKind::Config:
      return LA_ERR_USAGE;
    case ErrorKind::Numeric:
    case ErrorKind::Degenerate:
      return LA_ERR_NUMERIC;
    case ErrorKind::Dimension:
    case ErrorKind::Format:
    case ErrorKind::Alignment:
    case ErrorKind::Corruption:
    case ErrorKind::Version:
    case ErrorKind::Checkpoint:
    case ErrorKind::Io:
      return LA_ERR_DATA;
  }
  return LA_ERR_INTERNAL;
}

template <typename F>
la_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return LA_OK;
  } catch (const Error& e) {
    g_last_error = std::string(to_string(e.kind())) + ": " + e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_last_error = std::string("config: ") + e.what();
    return LA_ERR_USAGE;
  } catch (const fs::filesystem_error& e) {
    g_last_error = std::string("io: ") + e.what();
    return LA_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LA_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return LA_ERR_INTERNAL;
  }
}

json parse_json(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string(what) + ": invalid JSON: " + e.what());
  }
  require(j.is_object(), ErrorKind::Config, std::string(what) + ": expected a JSON object");
  return j;
}

/// Defaults of `base` overridden by keys present in `patch`.
json merged(json base, const json& patch) {
  base.merge_patch(patch);
  return base;
}

void put(char** out, const json& j) {
  if (!out) return;
  const std::string s = j.dump();
  char* buf = new char[s.size() + 1];
  std::memcpy(buf, s.c_str(), s.size() + 1);
  *out = buf;
}

const char* need_path(const char* p, const char* what) {
  require(p && *p, ErrorKind::Usage, std::string(what) + " must be a non-empty path");
  return p;
}

json manifest_json(const data::DatasetManifest& m) {
  json map = json::array();
  for (const auto& [name, w] : m.channel_map.entries) map.push_back({{"name", name}, {"width", w}});
  return {{"version", m.version},        {"split", m.split},
          {"seed", m.seed},              {"count", m.count},
          {"image_height", m.image_height}, {"image_width", m.image_width},
          {"window", m.window},          {"loco_channels", m.loco_channels},
          {"action_channels", m.action_channels}, {"lo_hz", m.lo_hz},
          {"cam_hz", m.cam_hz},          {"channel_map", map}};
}

json retrieval_json(const tasks::RetrievalReport& r) {
  json acc = json::object(), chance = json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    acc[std::to_string(r.ks[i])] = r.accuracy[i];
    chance[std::to_string(r.ks[i])] = r.chance(r.ks[i]);
  }
  return {{"direction", tasks::direction_name(r.direction)}, {"gallery", r.gallery}, {"queries", r.ranks.size()},
          {"accuracy", acc},                                  {"chance", chance},     {"warnings", r.warnings}};
}

}  // namespace

extern "C" {

const char* la_version(void) { return "0.1.0"; }

const char* la_last_error(void) { return g_last_error.c_str(); }

void la_string_free(char* s) { delete[] s; }

la_status la_synth_generate(const char* config_json, const char* out_dir, const char* raw_dir, char** result_json) {
  return guarded([&] {
    const auto cfg = synth::SynthConfig::from_json(merged(synth::SynthConfig{}.to_json(), parse_json(config_json, "synth config")));
    const fs::path out = need_path(out_dir, "out_dir");
    const auto split = synth::generate_dataset(cfg, out, raw_dir ? fs::path(raw_dir) : fs::path());
    put(result_json, {{"train_samples", split.train.size()},
                      {"test_samples", split.test.size()},
                      {"train_ids", split.train_ids},
                      {"test_ids", split.test_ids},
                      {"config", cfg.to_json()}});
  });
}

la_status la_prepare(const char* raw_root, const char* out_dir, const char* options_json, char** result_json) {
  return guarded([&] {
    const json o = parse_json(options_json, "prepare options");
    traj::SyncOptions sync;
    sync.hi_hz = o.value("hi_hz", sync.hi_hz);
    sync.lo_hz = o.value("lo_hz", sync.lo_hz);
    sync.cam_hz = o.value("cam_hz", sync.cam_hz);
    traj::WindowOptions win;
    win.window_s = o.value("window_s", win.window_s);
    win.stride_s = o.value("stride_s", win.stride_s);
    const double test_fraction = o.value("test_fraction", 0.25);
    const std::uint64_t seed = o.value("seed", std::uint64_t{0});
    const auto dirs = traj::list_raw_trajectories(need_path(raw_root, "raw_root"));
    require(!dirs.empty(), ErrorKind::Usage, std::string("no raw trajectories found under ") + raw_root);
    std::vector<data::DriveWindows> drives;
    for (const auto& d : dirs) drives.push_back(data::prepare_drive(traj::load_raw_trajectory(d), sync, win));
    const auto split = data::split_drives(std::move(drives), test_fraction, seed, sync);
    data::save_split(need_path(out_dir, "out_dir"), split);
    put(result_json, {{"trajectories", dirs.size()},
                      {"train_samples", split.train.size()},
                      {"test_samples", split.test.size()},
                      {"train_ids", split.train_ids},
                      {"test_ids", split.test_ids}});
  });
}

la_status la_dataset_open(const char* dir, la_dataset** out) {
  return guarded([&] {
    require(out != nullptr, ErrorKind::Usage, "la_dataset_open: null output handle");
    auto* h = new la_dataset{data::load_dataset(need_path(dir, "dataset dir"))};
    *out = h;
  });
}

void la_dataset_close(la_dataset* ds) { delete ds; }

size_t la_dataset_size(const la_dataset* ds) { return ds ? ds->ds.size() : 0; }

la_status la_dataset_info(const la_dataset* ds, char** info_json) {
  return guarded([&] {
    require(ds != nullptr, ErrorKind::Usage, "la_dataset_info: null dataset");
    put(info_json, manifest_json(ds->ds.manifest));
  });
}

la_status la_model_load(const char* dir, la_model** out) {
  return guarded([&] {
    require(out != nullptr, ErrorKind::Usage, "la_model_load: null output handle");
    auto* h = new la_model{model::load_checkpoint(need_path(dir, "checkpoint dir"))};
    *out = h;
  });
}

void la_model_free(la_model* m) { delete m; }

la_status la_model_info(const la_model* m, char** info_json) {
  return guarded([&] {
    require(m != nullptr, ErrorKind::Usage, "la_model_info: null model");
    put(info_json, {{"config", m->ckpt.config.to_json()},
                    {"seed", m->ckpt.seed},
                    {"tau", m->ckpt.tau()},
                    {"parameters", m->ckpt.params.total_elements()}});
  });
}

la_status la_pretrain(const la_dataset* train, const char* config_json, const char* out_dir, la_progress_fn progress, void* user,
                      char** result_json) {
  return guarded([&] {
    require(train != nullptr, ErrorKind::Usage, "la_pretrain: null dataset");
    const json cfg = parse_json(config_json, "pretrain config");
    const auto& m = train->ds.manifest;
    const auto mdef = model::ModelConfig::standard(m.image_height, m.image_width, m.loco_channels, m.window);
    const auto mcfg = model::ModelConfig::from_json(merged(mdef.to_json(), cfg.value("model", json::object())));
    const auto tcfg =
        contrastive::TrainConfig::from_json(merged(contrastive::TrainConfig{}.to_json(), cfg.value("train", json::object())));
    contrastive::ProgressFn fn;
    if (progress)
      fn = [&](const contrastive::LossRecord& r) {
        const std::string s = json{{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss_raw", r.loss_raw},
                                   {"loss_norm", r.loss_norm}, {"tau", r.tau}}
                                  .dump();
        progress(s.c_str(), user);
      };
    const auto res = contrastive::pretrain(train->ds, mcfg, tcfg, out_dir ? fs::path(out_dir) : fs::path(), fn);
    put(result_json, {{"steps", res.curve.size()},
                      {"epoch_loss", res.epoch_loss},
                      {"initial_loss", res.curve.empty() ? 0.0 : res.curve.front().loss_norm},
                      {"final_loss", res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()},
                      {"tau", res.final_ckpt.tau()},
                      {"model", mcfg.to_json()},
                      {"train", tcfg.to_json()}});
  });
}

la_status la_eval_retrieval(const la_model* m, const la_dataset* test, const char* options_json, const char* out_dir,
                            char** result_json) {
  return guarded([&] {
    require(m != nullptr && test != nullptr, ErrorKind::Usage, "la_eval_retrieval: null handle");
    const json o = parse_json(options_json, "retrieval options");
    const auto dir = tasks::parse_direction(o.value("direction", std::string("s2m")));
    const auto ks = o.value("ks", std::vector<std::size_t>{1, 10, 50});
    const auto gallery = o.value("gallery_size", std::size_t{0});
    const bool mask = o.value("mask_action", false);
    const auto emb = tasks::embed_dataset(m->ckpt, test->ds, mask);
    const auto r = tasks::eval_retrieval(emb, dir, ks, gallery);
    if (out_dir) tasks::write_retrieval_report(out_dir, r);
    json j = retrieval_json(r);
    j["mask_action"] = mask;
    put(result_json, j);
  });
}

la_status la_eval_dynamics(const la_model* m, const la_dataset* train, const la_dataset* test, const char* options_json,
                           const char* out_dir, char** result_json) {
  return guarded([&] {
    require(train != nullptr && test != nullptr, ErrorKind::Usage, "la_eval_dynamics: null dataset");
    const json o = parse_json(options_json, "dynamics options");
    const auto baseline = tasks::parse_baseline(o.value("baseline", std::string("pretrained")));
    const auto pcfg =
        tasks::PredictorConfig::from_json(merged(tasks::PredictorConfig{}.to_json(), o.value("predictor", json::object())));
    const auto kbm = tasks::KbmParams::from_json(merged(tasks::KbmParams{}.to_json(), o.value("kbm", json::object())));
    model::Checkpoint none;
    if (baseline != tasks::Baseline::Kbm) require(m != nullptr, ErrorKind::Usage, "learned baselines need a checkpoint");
    const auto r = tasks::run_dynamics(baseline, m ? m->ckpt : none, train->ds, test->ds, pcfg, kbm);
    if (out_dir) tasks::write_dynamics_report(out_dir, r);
    put(result_json, {{"baseline", r.baseline},
                      {"samples", r.samples},
                      {"steps", r.steps},
                      {"rmse", r.errors.joint},
                      {"rmse_position", r.errors.position},
                      {"rmse_quaternion", r.errors.quaternion},
                      {"per_step", r.errors.per_step},
                      {"final_train_loss", r.train_loss.empty() ? json(nullptr) : json(r.train_loss.back())},
                      {"predictor", pcfg.to_json()},
                      {"kbm", kbm.to_json()}});
  });
}

la_status la_export_embeddings(const la_model* m, const la_dataset* ds, int mask_action, const char* out_dir, char** result_json) {
  return guarded([&] {
    require(m != nullptr && ds != nullptr, ErrorKind::Usage, "la_export_embeddings: null handle");
    const auto emb = tasks::embed_dataset(m->ckpt, ds->ds, mask_action != 0);
    tasks::export_embeddings(need_path(out_dir, "out_dir"), ds->ds, emb, mask_action != 0);
    put(result_json, {{"rows", emb.n}, {"dim", emb.dim}, {"mask_action", mask_action != 0}});
  });
}

la_status la_plot(const char* run_dir, const char* out_dir, char** result_json) {
  return guarded([&] {
    const auto files = tasks::plot_run(need_path(run_dir, "run_dir"), need_path(out_dir, "out_dir"));
    json list = json::array();
    for (const auto& f : files) list.push_back(f.string());
    put(result_json, {{"files", list}});
  });
}

}  // extern "C"
