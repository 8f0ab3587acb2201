// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "core/error.hpp"
#include "core/io.hpp"
#include "core/rng.hpp"

namespace locoalign::data {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json channel_map_json(const traj::ChannelMap& map) {
  json arr = json::array();
  for (const auto& [name, n] : map.entries) arr.push_back({{"name", name}, {"channels", n}});
  return arr;
}

traj::ChannelMap channel_map_from(const json& arr) {
  traj::ChannelMap map;
  for (const auto& e : arr) map.entries.emplace_back(e.at("name").get<std::string>(), e.at("channels").get<std::size_t>());
  return map;
}

void check_blob(const fs::path& path, std::uintmax_t expected) {
  if (!fs::exists(path)) fail(ErrorKind::Corruption, "missing blob " + path.string());
  const auto actual = io::file_size(path);
  if (actual != expected)
    fail(ErrorKind::Corruption, path.string() + ": expected " + std::to_string(expected) + " bytes, found " + std::to_string(actual));
}

}  // namespace

Dataset make_dataset(std::vector<traj::TripletSample> samples, const std::string& split, std::uint64_t seed,
                     const traj::ChannelMap& map, double lo_hz, double cam_hz) {
  Dataset ds;
  ds.manifest.split = split;
  ds.manifest.seed = seed;
  ds.manifest.count = samples.size();
  ds.manifest.channel_map = map;
  ds.manifest.lo_hz = lo_hz;
  ds.manifest.cam_hz = cam_hz;
  ds.manifest.loco_channels = map.width();
  if (!samples.empty()) {
    const auto& f = samples.front();
    ds.manifest.image_height = f.o.height;
    ds.manifest.image_width = f.o.width;
    ds.manifest.window = f.window;
    ds.manifest.loco_channels = f.loco_channels;
    for (const auto& s : samples) {
      require(s.o.height == f.o.height && s.o.width == f.o.width && s.window == f.window && s.loco_channels == f.loco_channels,
              ErrorKind::Dimension, "dataset samples have inconsistent dimensions");
    }
  }
  ds.samples = std::move(samples);
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  const auto& m = ds.manifest;
  require(m.count == ds.samples.size(), ErrorKind::Usage, "manifest count disagrees with sample count");
  io::ensure_dir(dir);

  const std::size_t obs_n = m.image_height * m.image_width;
  const std::size_t loco_n = m.window * m.loco_channels;
  const std::size_t act_n = m.window * m.action_channels;
  std::vector<float> obs, loco, act;
  obs.reserve(m.count * obs_n);
  loco.reserve(m.count * loco_n);
  act.reserve(m.count * act_n);
  json samples = json::array();
  for (const auto& s : ds.samples) {
    require(s.o.pixels.size() == obs_n && s.s.size() == loco_n && s.c.size() == act_n, ErrorKind::Dimension,
            "sample '" + s.source_id + "' does not match manifest dimensions");
    obs.insert(obs.end(), s.o.pixels.begin(), s.o.pixels.end());
    loco.insert(loco.end(), s.s.begin(), s.s.end());
    act.insert(act.end(), s.c.begin(), s.c.end());
    samples.push_back({{"source_id", s.source_id}, {"t0", s.t0}});
  }

  json j;
  j["version"] = m.version;
  j["split"] = m.split;
  j["seed"] = m.seed;
  j["count"] = m.count;
  j["dims"] = {{"image_height", m.image_height},
               {"image_width", m.image_width},
               {"window", m.window},
               {"loco_channels", m.loco_channels},
               {"action_channels", m.action_channels}};
  j["rates"] = {{"lo_hz", m.lo_hz}, {"cam_hz", m.cam_hz}};
  j["channel_map"] = channel_map_json(m.channel_map);
  j["blobs"] = {
      {"obs", {{"file", "obs.f32"}, {"bytes", obs.size() * 4}, {"sample_floats", obs_n}}},
      {"loco", {{"file", "loco.f32"}, {"bytes", loco.size() * 4}, {"sample_floats", loco_n}}},
      {"act", {{"file", "act.f32"}, {"bytes", act.size() * 4}, {"sample_floats", act_n}}},
  };
  j["samples"] = std::move(samples);

  io::write_f32(dir / "obs.f32", obs);
  io::write_f32(dir / "loco.f32", loco);
  io::write_f32(dir / "act.f32", act);
  io::write_text(dir / "manifest.json", j.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) fail(ErrorKind::Io, "no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, manifest_path.string() + ": " + e.what());
  }

  Dataset ds;
  auto& m = ds.manifest;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetVersion)
      fail(ErrorKind::Version, "unsupported dataset version " + std::to_string(m.version) + " in " + dir.string());
    m.split = j.at("split").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.count = j.at("count").get<std::size_t>();
    const auto& d = j.at("dims");
    m.image_height = d.at("image_height").get<std::size_t>();
    m.image_width = d.at("image_width").get<std::size_t>();
    m.window = d.at("window").get<std::size_t>();
    m.loco_channels = d.at("loco_channels").get<std::size_t>();
    m.action_channels = d.at("action_channels").get<std::size_t>();
    m.lo_hz = j.at("rates").at("lo_hz").get<double>();
    m.cam_hz = j.at("rates").at("cam_hz").get<double>();
    m.channel_map = channel_map_from(j.at("channel_map"));
    require(j.at("samples").size() == m.count, ErrorKind::Corruption, "manifest sample table disagrees with count");
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, manifest_path.string() + ": " + e.what());
  }

  const std::size_t obs_n = m.image_height * m.image_width;
  const std::size_t loco_n = m.window * m.loco_channels;
  const std::size_t act_n = m.window * m.action_channels;
  check_blob(dir / "obs.f32", m.count * obs_n * 4);
  check_blob(dir / "loco.f32", m.count * loco_n * 4);
  check_blob(dir / "act.f32", m.count * act_n * 4);
  const auto obs = io::read_f32(dir / "obs.f32");
  const auto loco = io::read_f32(dir / "loco.f32");
  const auto act = io::read_f32(dir / "act.f32");

  ds.samples.resize(m.count);
  for (std::size_t i = 0; i < m.count; ++i) {
    auto& s = ds.samples[i];
    const auto& meta = j["samples"][i];
    s.source_id = meta.at("source_id").get<std::string>();
    s.t0 = meta.at("t0").get<double>();
    s.window = m.window;
    s.loco_channels = m.loco_channels;
    s.o.height = m.image_height;
    s.o.width = m.image_width;
    s.o.pixels.assign(obs.begin() + static_cast<std::ptrdiff_t>(i * obs_n), obs.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_n));
    s.s.assign(loco.begin() + static_cast<std::ptrdiff_t>(i * loco_n), loco.begin() + static_cast<std::ptrdiff_t>((i + 1) * loco_n));
    s.c.assign(act.begin() + static_cast<std::ptrdiff_t>(i * act_n), act.begin() + static_cast<std::ptrdiff_t>((i + 1) * act_n));
  }
  return ds;
}

DriveWindows prepare_drive(const traj::Trajectory& t, const traj::SyncOptions& sync, const traj::WindowOptions& window) {
  return {t.source_id, traj::window_triplets(traj::synchronize(t, sync), window)};
}

SplitResult split_drives(std::vector<DriveWindows> drives, double test_fraction, std::uint64_t seed,
                         const traj::SyncOptions& sync) {
  require(test_fraction >= 0.0 && test_fraction <= 1.0, ErrorKind::Config, "test_fraction must lie in [0,1]");
  const std::size_t n = drives.size();
  std::set<std::string> seen;
  for (const auto& d : drives) require(seen.insert(d.source_id).second, ErrorKind::Format, "duplicate source_id '" + d.source_id + "'");

  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  else n_test = 0;
  Rng rng(derive_seed(seed, "split"));
  const auto order = rng.permutation(n);
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  SplitResult out;
  std::vector<traj::TripletSample> train, test;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = is_test[i] ? test : train;
    (is_test[i] ? out.test_ids : out.train_ids).push_back(drives[i].source_id);
    for (auto& s : drives[i].samples) dst.push_back(std::move(s));
  }
  out.train = make_dataset(std::move(train), "train", seed, sync.channel_map, sync.lo_hz, sync.cam_hz);
  out.test = make_dataset(std::move(test), "test", seed, sync.channel_map, sync.lo_hz, sync.cam_hz);
  return out;
}

void save_split(const fs::path& out, const SplitResult& split) {
  save_dataset(out / "train", split.train);
  save_dataset(out / "test", split.test);
}

}  // namespace locoalign::data
