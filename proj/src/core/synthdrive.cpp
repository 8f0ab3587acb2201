// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/synthdrive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "core/error.hpp"
#include "core/io.hpp"
#include "core/rawlog.hpp"
#include "core/rng.hpp"

namespace locoalign::synth {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::size_t divisor(double hi_hz, double rate, const char* name) {
  require(rate > 0, ErrorKind::Config, std::string("synth: ") + name + " rate must be positive");
  const double r = hi_hz / rate;
  const auto n = static_cast<std::size_t>(std::llround(r));
  require(n >= 1 && std::abs(r - static_cast<double>(n)) < 1e-9, ErrorKind::Config,
          std::string("synth: ") + name + " rate must divide hi_hz");
  return n;
}

/// Hash of a lattice point to [-1, 1).
double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t salt) {
  const std::uint64_t h = mix64(salt ^ mix64(static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ULL ^
                                             static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Bilinear value noise with smoothstep weights, range (-1, 1).
double value_noise(double x, double y, std::uint64_t salt) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
  const double a = lattice(ix, iy, salt), b = lattice(ix + 1, iy, salt);
  const double c = lattice(ix, iy + 1, salt), d = lattice(ix + 1, iy + 1, salt);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

traj::ModalityStream make_stream(const std::string& name, double rate, std::size_t channels, traj::Interp interp) {
  traj::ModalityStream s;
  s.name = name;
  s.rate_hz = rate;
  s.channels = channels;
  s.interp = interp;
  return s;
}

void push(traj::ModalityStream& s, double t, std::initializer_list<double> values) {
  s.timestamps.push_back(t);
  for (double v : values) s.values.push_back(static_cast<float>(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void SynthConfig::validate() const {
  require(trajectories >= 1, ErrorKind::Config, "synth: need at least one trajectory");
  require(test_fraction >= 0 && test_fraction <= 1, ErrorKind::Config, "synth: test_fraction must lie in [0,1]");
  require(duration_s > 0 && world_size > 0 && cell_size > 0 && cell_size <= world_size, ErrorKind::Config,
          "synth: duration, world and cell sizes must be positive");
  require(classes >= 1 && classes <= 255 && regions >= 1, ErrorKind::Config, "synth: need 1..255 classes and >= 1 region");
  require(a_max > 0 && drag > 0 && wheelbase > 0 && max_steer > 0 && max_steer < std::numbers::pi / 2, ErrorKind::Config,
          "synth: dynamics constants must be positive (max_steer below pi/2)");
  require(wheel_radius > 0 && track > 0 && v0_max >= 0, ErrorKind::Config, "synth: wheel geometry must be positive");
  require(sigma0 > 0 && k_r >= 0 && shock_tau > 0 && pixel_noise >= 0, ErrorKind::Config, "synth: noise constants must be positive");
  require(image_height >= 2 && image_width >= 1 && view_m > 0, ErrorKind::Config, "synth: invalid image geometry");
  require(hi_hz > 0 && drag / hi_hz < 1.0, ErrorKind::Config, "synth: hi_hz too low for stable integration");
  for (auto [rate, name] : {std::pair{pose_hz, "pose"}, {imu_hz, "imu"}, {shock_hz, "shock"}, {rpm_hz, "rpm"},
                            {action_hz, "action"}, {cam_hz, "camera"}})
    (void)divisor(hi_hz, rate, name);
  require(segment_min_s > 0 && segment_max_s >= segment_min_s, ErrorKind::Config, "synth: invalid policy segment lengths");
  const auto b = bands();
  require(b.size() == classes, ErrorKind::Config, "synth: need one roughness band per class");
  for (std::size_t i = 0; i < b.size(); ++i) {
    require(b[i].first >= 0 && b[i].first <= b[i].second && b[i].second <= 1, ErrorKind::Config,
            "synth: roughness bands must lie in [0,1]");
    if (i > 0) require(b[i].first > b[i - 1].second, ErrorKind::Config, "synth: roughness bands must be disjoint and ordered");
  }
}

std::vector<std::pair<double, double>> SynthConfig::bands() const {
  if (!roughness_bands.empty()) return roughness_bands;
  // Evenly spaced bands covering 60% of each slot leave visible gaps.
  std::vector<std::pair<double, double>> out;
  const double slot = 1.0 / static_cast<double>(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    const double lo = slot * static_cast<double>(k);
    out.emplace_back(lo, lo + 0.6 * slot);
  }
  return out;
}

json SynthConfig::to_json() const {
  json bands_j = json::array();
  for (const auto& [lo, hi] : roughness_bands) bands_j.push_back({lo, hi});
  return {{"seed", seed},
          {"trajectories", trajectories},
          {"test_fraction", test_fraction},
          {"duration_s", duration_s},
          {"world_size", world_size},
          {"cell_size", cell_size},
          {"classes", classes},
          {"regions", regions},
          {"roughness_bands", bands_j},
          {"a_max", a_max},
          {"drag", drag},
          {"wheelbase", wheelbase},
          {"max_steer", max_steer},
          {"wheel_radius", wheel_radius},
          {"track", track},
          {"v0_max", v0_max},
          {"sigma0", sigma0},
          {"k_r", k_r},
          {"shock_tau", shock_tau},
          {"image_height", image_height},
          {"image_width", image_width},
          {"view_m", view_m},
          {"pixel_noise", pixel_noise},
          {"hi_hz", hi_hz},
          {"pose_hz", pose_hz},
          {"imu_hz", imu_hz},
          {"shock_hz", shock_hz},
          {"rpm_hz", rpm_hz},
          {"action_hz", action_hz},
          {"cam_hz", cam_hz},
          {"segment_min_s", segment_min_s},
          {"segment_max_s", segment_max_s}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  try {
#define LA_FIELD(name) c.name = j.value(#name, c.name)
    LA_FIELD(seed);
    LA_FIELD(trajectories);
    LA_FIELD(test_fraction);
    LA_FIELD(duration_s);
    LA_FIELD(world_size);
    LA_FIELD(cell_size);
    LA_FIELD(classes);
    LA_FIELD(regions);
    LA_FIELD(a_max);
    LA_FIELD(drag);
    LA_FIELD(wheelbase);
    LA_FIELD(max_steer);
    LA_FIELD(wheel_radius);
    LA_FIELD(track);
    LA_FIELD(v0_max);
    LA_FIELD(sigma0);
    LA_FIELD(k_r);
    LA_FIELD(shock_tau);
    LA_FIELD(image_height);
    LA_FIELD(image_width);
    LA_FIELD(view_m);
    LA_FIELD(pixel_noise);
    LA_FIELD(hi_hz);
    LA_FIELD(pose_hz);
    LA_FIELD(imu_hz);
    LA_FIELD(shock_hz);
    LA_FIELD(rpm_hz);
    LA_FIELD(action_hz);
    LA_FIELD(cam_hz);
    LA_FIELD(segment_min_s);
    LA_FIELD(segment_max_s);
#undef LA_FIELD
    if (j.contains("roughness_bands"))
      for (const auto& b : j.at("roughness_bands")) c.roughness_bands.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("synth config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Terrain

TerrainField::TerrainField(double world_size, double cell_size, std::size_t classes, std::vector<std::pair<double, double>> bands,
                           std::size_t cols, std::vector<std::uint8_t> cls, std::vector<float> roughness, std::uint64_t texture_seed)
    : world_size_(world_size),
      cell_size_(cell_size),
      classes_(classes),
      bands_(std::move(bands)),
      cols_(cols),
      class_(std::move(cls)),
      roughness_(std::move(roughness)),
      texture_seed_(texture_seed) {
  require(class_.size() == cols_ * cols_ && roughness_.size() == cols_ * cols_, ErrorKind::Dimension,
          "terrain grid does not cover the world");
}

bool TerrainField::inside(double x, double y) const noexcept {
  return x >= 0.0 && y >= 0.0 && x < world_size_ && y < world_size_;
}

std::size_t TerrainField::cell_index(double x, double y) const {
  auto clampi = [&](double v) {
    const double c = std::floor(v / cell_size_);
    return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(cols_ - 1)));
  };
  return clampi(y) * cols_ + clampi(x);
}

double TerrainField::roughness(double x, double y) const { return roughness_[cell_index(x, y)]; }
std::size_t TerrainField::class_at(double x, double y) const { return class_[cell_index(x, y)]; }

double TerrainField::texture(double x, double y) const {
  const std::size_t k = class_at(x, y);
  const double f = classes_ > 1 ? static_cast<double>(k) / static_cast<double>(classes_ - 1) : 0.0;
  // Rougher classes are brighter, more contrasted and finer grained.
  const double base = 0.25 + 0.5 * f;
  const double amp = 0.05 + 0.3 * f;
  const double spacing = 1.5 - 1.0 * f;
  const double n = value_noise(x / spacing, y / spacing, derive_seed(texture_seed_, k));
  return std::clamp(base + amp * n, 0.0, 1.0);
}

TerrainField generate_terrain(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  const auto bands = cfg.bands();
  const auto cols = static_cast<std::size_t>(std::ceil(cfg.world_size / cfg.cell_size - 1e-9));
  Rng rng(derive_seed(seed, "regions"));
  struct Site {
    double x, y;
    std::uint8_t cls;
    double level;
  };
  std::vector<Site> sites(cfg.regions);
  for (std::size_t i = 0; i < cfg.regions; ++i) {
    sites[i].x = rng.uniform(0.0, cfg.world_size);
    sites[i].y = rng.uniform(0.0, cfg.world_size);
    sites[i].cls = static_cast<std::uint8_t>(rng.below(cfg.classes));
    sites[i].level = rng.uniform();
  }
  Rng jitter(derive_seed(seed, "roughness"));
  std::vector<std::uint8_t> cls(cols * cols);
  std::vector<float> rough(cols * cols);
  for (std::size_t r = 0; r < cols; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * cfg.cell_size;
      const double y = (static_cast<double>(r) + 0.5) * cfg.cell_size;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sites.size(); ++i) {
        const double d = (sites[i].x - x) * (sites[i].x - x) + (sites[i].y - y) * (sites[i].y - y);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      const auto& s = sites[best];
      const auto [lo, hi] = bands[s.cls];
      cls[r * cols + c] = s.cls;
      rough[r * cols + c] = static_cast<float>(lo + (hi - lo) * (0.5 * s.level + 0.5 * jitter.uniform()));
    }
  }
  return TerrainField(cfg.world_size, cfg.cell_size, cfg.classes, bands, cols, std::move(cls), std::move(rough),
                      derive_seed(seed, "texture"));
}

// ---------------------------------------------------------------------------
// Vehicle and policy

std::array<double, 4> yaw_quaternion(double heading) {
  return {0.0, 0.0, std::sin(0.5 * heading), std::cos(0.5 * heading)};
}

Policy Policy::random(std::uint64_t seed, double duration_s, double min_s, double max_s) {
  Rng rng(seed);
  Policy p;
  double t = 0.0;
  while (t < duration_s) {
    p.switch_times.push_back(t);
    p.throttle.push_back(rng.uniform());
    p.steering.push_back(rng.uniform(-1.0, 1.0));
    t += rng.uniform(min_s, max_s);
  }
  return p;
}

Policy Policy::constant(double throttle, double steering) { return Policy{{0.0}, {throttle}, {steering}}; }

std::pair<double, double> Policy::at(double t) const {
  require(!switch_times.empty(), ErrorKind::Usage, "policy has no segments");
  const auto it = std::upper_bound(switch_times.begin(), switch_times.end(), t);
  const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - switch_times.begin()) - 1));
  return {std::clamp(throttle[i], 0.0, 1.0), std::clamp(steering[i], -1.0, 1.0)};
}

traj::Trajectory generate_trajectory(const TerrainField& terrain, const SynthConfig& cfg, std::uint64_t policy_seed,
                                     const std::string& source_id, const GenerateOptions& opts) {
  const auto policy = Policy::random(derive_seed(policy_seed, "policy"), cfg.duration_s, cfg.segment_min_s, cfg.segment_max_s);
  GenerateOptions o = opts;
  if (o.random_start) {
    Rng rng(derive_seed(policy_seed, "start"));
    const double w = terrain.world_size();
    o.start.x = rng.uniform(0.25 * w, 0.75 * w);
    o.start.y = rng.uniform(0.25 * w, 0.75 * w);
    o.start.heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    o.start.speed = rng.uniform(0.0, cfg.v0_max);
    o.random_start = false;
  }
  return generate_trajectory(terrain, cfg, policy, derive_seed(policy_seed, "noise"), source_id, o);
}

traj::Trajectory generate_trajectory(const TerrainField& terrain, const SynthConfig& cfg, const Policy& policy,
                                     std::uint64_t noise_seed, const std::string& source_id, const GenerateOptions& opts) {
  cfg.validate();
  require(!opts.random_start, ErrorKind::Usage, "generate_trajectory: explicit start required with an explicit policy");
  require(terrain.inside(opts.start.x, opts.start.y), ErrorKind::Config, "generate_trajectory: start lies outside the world");
  require(opts.start.speed >= 0, ErrorKind::Config, "generate_trajectory: initial speed must be non-negative");

  const double hi = cfg.hi_hz;
  const double dt = 1.0 / hi;
  const auto pose_div = divisor(hi, cfg.pose_hz, "pose");
  const auto imu_div = divisor(hi, cfg.imu_hz, "imu");
  const auto shock_div = divisor(hi, cfg.shock_hz, "shock");
  const auto rpm_div = divisor(hi, cfg.rpm_hz, "rpm");
  const auto act_div = divisor(hi, cfg.action_hz, "action");
  const auto cam_div = divisor(hi, cfg.cam_hz, "camera");
  const auto steps = static_cast<std::size_t>(std::floor(cfg.duration_s * hi + 1e-9));

  traj::Trajectory out;
  out.source_id = source_id;
  auto pose = make_stream("pose", cfg.pose_hz, 7, traj::Interp::Linear);
  auto angvel = make_stream("angvel", cfg.imu_hz, 3, traj::Interp::Linear);
  auto linacc = make_stream("linacc", cfg.imu_hz, 3, traj::Interp::Linear);
  auto shock = make_stream("shock", cfg.shock_hz, 4, traj::Interp::Linear);
  auto rpm = make_stream("rpm", cfg.rpm_hz, 4, traj::Interp::Linear);
  out.action = make_stream("action", cfg.action_hz, 2, traj::Interp::Hold);
  out.obs.rate_hz = cfg.cam_hz;
  out.obs.height = cfg.image_height;
  out.obs.width = cfg.image_width;

  Rng noise(noise_seed);
  Rng pixels(derive_seed(noise_seed, "pixels"));
  VehicleState s = opts.start;
  double shock_state[4] = {0.0, 0.0, 0.0, 0.0};
  const double alpha = dt / (cfg.shock_tau + dt);
  const double rpm_per_mps = 60.0 / (2.0 * std::numbers::pi * cfg.wheel_radius);
  double throttle = 0.0, steer = 0.0;

  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) / hi;
    // Controls are sampled at the action rate and held, exactly as logged.
    if (k % act_div == 0) {
      std::tie(throttle, steer) = policy.at(t);
      push(out.action, t, {throttle, steer});
    }
    const double r = terrain.roughness(s.x, s.y);
    const double yaw_rate = s.speed / cfg.wheelbase * std::tan(steer * cfg.max_steer);
    const double accel = cfg.a_max * (1.0 - 0.5 * r) * throttle - cfg.drag * s.speed;
    const double sigma = cfg.sigma0 + cfg.k_r * r * s.speed;

    const double nz = sigma * noise.normal();
    const double nx = 0.3 * sigma * noise.normal();
    const double ny = 0.3 * sigma * noise.normal();
    const double nroll = 0.2 * sigma * noise.normal();
    const double npitch = 0.2 * sigma * noise.normal();
    for (double& w : shock_state) w += alpha * (std::abs(nz + 0.5 * sigma * noise.normal()) - w);

    if (k % imu_div == 0) {
      push(angvel, t, {nroll, npitch, yaw_rate});
      push(linacc, t, {accel + nx, s.speed * yaw_rate + ny, nz});
    }
    if (k % shock_div == 0) push(shock, t, {shock_state[0], shock_state[1], shock_state[2], shock_state[3]});
    if (k % rpm_div == 0) {
      const double vl = s.speed - 0.5 * cfg.track * yaw_rate;
      const double vr = s.speed + 0.5 * cfg.track * yaw_rate;
      push(rpm, t, {vl * rpm_per_mps, vr * rpm_per_mps, vl * rpm_per_mps, vr * rpm_per_mps});
    }
    if (k % pose_div == 0) {
      const auto q = yaw_quaternion(s.heading);
      push(pose, t, {s.x, s.y, s.z, q[0], q[1], q[2], q[3]});
    }
    if (k % cam_div == 0) {
      // Row 0 is the far edge of the patch, the last row touches the bumper.
      const double c = std::cos(s.heading), sn = std::sin(s.heading);
      out.obs.timestamps.push_back(t);
      for (std::size_t i = 0; i < cfg.image_height; ++i) {
        const double ahead = cfg.view_m * (1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(cfg.image_height));
        for (std::size_t j = 0; j < cfg.image_width; ++j) {
          const double side = cfg.view_m * ((static_cast<double>(j) + 0.5) / static_cast<double>(cfg.image_width) - 0.5);
          const double wx = s.x + ahead * c + side * sn;
          const double wy = s.y + ahead * sn - side * c;
          out.obs.pixels.push_back(static_cast<float>(terrain.texture(wx, wy) + cfg.pixel_noise * pixels.normal()));
        }
      }
    }
    if (k == steps) break;

    const double v = s.speed;
    s.speed = std::max(0.0, v + accel * dt);
    s.x += v * std::cos(s.heading) * dt;
    s.y += v * std::sin(s.heading) * dt;
    s.heading += yaw_rate * dt;
    if (!terrain.inside(s.x, s.y)) break;
  }
  out.loco = {std::move(pose), std::move(angvel), std::move(linacc), std::move(shock), std::move(rpm)};
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

data::SplitResult generate_dataset(const SynthConfig& cfg, const fs::path& out, const fs::path& raw_dir) {
  cfg.validate();
  const auto terrain = generate_terrain(derive_seed(cfg.seed, "terrain"), cfg);
  const std::uint64_t traj_seed = derive_seed(cfg.seed, "trajectory");
  traj::SyncOptions sync;
  sync.hi_hz = cfg.hi_hz;
  sync.cam_hz = cfg.cam_hz;

  std::vector<data::DriveWindows> drives;
  drives.reserve(cfg.trajectories);
  for (std::size_t i = 0; i < cfg.trajectories; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05zu", i);
    const auto t = generate_trajectory(terrain, cfg, derive_seed(traj_seed, i), id);
    if (!raw_dir.empty()) traj::save_raw_trajectory(raw_dir / id, t);
    drives.push_back(data::prepare_drive(t, sync));
  }
  auto split = data::split_drives(std::move(drives), cfg.test_fraction, cfg.seed, sync);
  if (!out.empty()) {
    data::save_split(out, split);
    io::write_text(out / "synth_config.json", cfg.to_json().dump(2) + "\n");
  }
  return split;
}

}  // namespace locoalign::synth
