// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/rawlog.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

#include "core/error.hpp"
#include "core/io.hpp"

namespace locoalign::traj {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool safe_name(const std::string& name) {
  if (name.empty() || name == "." || name == "..") return false;
  return std::all_of(name.begin(), name.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; });
}

json save_stream(const fs::path& dir, const ModalityStream& s) {
  require(safe_name(s.name), ErrorKind::Format, "stream name '" + s.name + "' is not a valid file stem");
  io::write_f64(dir / (s.name + ".ts.f64"), s.timestamps);
  io::write_f32(dir / (s.name + ".f32"), s.values);
  return {{"name", s.name}, {"rate_hz", s.rate_hz}, {"channels", s.channels}, {"interp", s.interp == Interp::Hold ? "hold" : "linear"}};
}

ModalityStream load_stream(const fs::path& dir, const json& e) {
  ModalityStream s;
  s.name = e.at("name").get<std::string>();
  require(safe_name(s.name), ErrorKind::Format, "stream name '" + s.name + "' is not a valid file stem");
  s.rate_hz = e.at("rate_hz").get<double>();
  s.channels = e.at("channels").get<std::size_t>();
  const auto interp = e.value("interp", std::string("linear"));
  if (interp == "linear") s.interp = Interp::Linear;
  else if (interp == "hold") s.interp = Interp::Hold;
  else fail(ErrorKind::Format, "stream '" + s.name + "': unknown interp '" + interp + "'");
  s.timestamps = io::read_f64(dir / (s.name + ".ts.f64"));
  s.values = io::read_f32(dir / (s.name + ".f32"));
  if (s.values.size() != s.timestamps.size() * s.channels)
    fail(ErrorKind::Corruption, "stream '" + s.name + "': " + std::to_string(s.values.size()) + " values for " +
                                    std::to_string(s.timestamps.size()) + " frames of " + std::to_string(s.channels) + " channels");
  return s;
}

}  // namespace

void save_raw_trajectory(const fs::path& dir, const Trajectory& t) {
  io::ensure_dir(dir);
  json j;
  j["version"] = kRawLogVersion;
  j["source_id"] = t.source_id;
  io::write_f64(dir / "camera.ts.f64", t.obs.timestamps);
  io::write_f32(dir / "camera.f32", t.obs.pixels);
  j["camera"] = {{"name", "camera"}, {"rate_hz", t.obs.rate_hz}, {"height", t.obs.height}, {"width", t.obs.width}};
  j["action"] = save_stream(dir, t.action);
  json loco = json::array();
  for (const auto& s : t.loco) {
    require(s.name != "camera" && s.name != t.action.name, ErrorKind::Format, "stream name '" + s.name + "' collides");
    loco.push_back(save_stream(dir, s));
  }
  j["loco"] = std::move(loco);
  io::write_text(dir / "trajectory.json", j.dump(2) + "\n");
}

Trajectory load_raw_trajectory(const fs::path& dir) {
  const auto path = dir / "trajectory.json";
  if (!fs::exists(path)) fail(ErrorKind::Io, "no trajectory.json in " + dir.string());
  Trajectory t;
  try {
    const json j = json::parse(io::read_text(path));
    const int version = j.at("version").get<int>();
    if (version != kRawLogVersion) fail(ErrorKind::Version, path.string() + ": unsupported version " + std::to_string(version));
    t.source_id = j.at("source_id").get<std::string>();
    const auto& cam = j.at("camera");
    t.obs.rate_hz = cam.at("rate_hz").get<double>();
    t.obs.height = cam.at("height").get<std::size_t>();
    t.obs.width = cam.at("width").get<std::size_t>();
    t.obs.timestamps = io::read_f64(dir / "camera.ts.f64");
    t.obs.pixels = io::read_f32(dir / "camera.f32");
    if (t.obs.pixels.size() != t.obs.timestamps.size() * t.obs.height * t.obs.width)
      fail(ErrorKind::Corruption, dir.string() + ": camera pixel count disagrees with frames x height x width");
    t.action = load_stream(dir, j.at("action"));
    for (const auto& e : j.at("loco")) t.loco.push_back(load_stream(dir, e));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return t;
}

std::vector<fs::path> list_raw_trajectories(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorKind::Io, "raw trajectory directory not found: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "trajectory.json")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace locoalign::traj
