// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace locoalign::traj {

namespace {

constexpr double kTimeEps = 1e-9;

void validate(const ModalityStream& s) {
  require(s.rate_hz > 0.0, ErrorKind::Format, "stream '" + s.name + "': rate must be positive");
  require(s.channels > 0, ErrorKind::Format, "stream '" + s.name + "': channel count must be positive");
  require(!s.timestamps.empty(), ErrorKind::Format, "stream '" + s.name + "' is empty");
  require(s.values.size() == s.frames() * s.channels, ErrorKind::Format,
          "stream '" + s.name + "': values length disagrees with frames x channels");
  for (std::size_t i = 1; i < s.timestamps.size(); ++i)
    if (!(s.timestamps[i] > s.timestamps[i - 1]))
      fail(ErrorKind::Format, "stream '" + s.name + "': timestamps not strictly increasing at frame " + std::to_string(i));
}

/// Samples one channel on the grid t_start + k/hi_hz, k < n_hi.
void upsample(const ModalityStream& s, std::size_t ch, Interp interp, double t_start, double hi_hz, std::size_t n_hi,
              std::vector<double>& out) {
  out.resize(n_hi);
  const auto& ts = s.timestamps;
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n_hi; ++k) {
    const double t = t_start + static_cast<double>(k) / hi_hz;
    while (seg + 1 < ts.size() && ts[seg + 1] <= t + kTimeEps) ++seg;
    if (interp == Interp::Hold || seg + 1 >= ts.size() || t <= ts[seg]) {
      out[k] = s.at(seg, ch);
      continue;
    }
    const double v0 = s.at(seg, ch), v1 = s.at(seg + 1, ch);
    const double frac = (t - ts[seg]) / (ts[seg + 1] - ts[seg]);
    out[k] = v0 + (v1 - v0) * frac;
  }
}

/// Block-average a hi-rate channel into `dst` column `col` of a lo-rate buffer.
void block_mean(const std::vector<double>& hi, std::size_t ratio, std::size_t n_lo, std::size_t width, std::size_t col,
                std::vector<float>& dst) {
  for (std::size_t j = 0; j < n_lo; ++j) {
    double acc = 0.0;
    for (std::size_t r = 0; r < ratio; ++r) acc += hi[j * ratio + r];
    dst[j * width + col] = static_cast<float>(acc / static_cast<double>(ratio));
  }
}

ImageStream resample_camera(const ImageStream& cam, double cam_hz, double t_start, double t_end) {
  require(cam.frames() > 0, ErrorKind::Alignment, "camera stream is empty");
  require(cam.pixels.size() == cam.frames() * cam.height * cam.width, ErrorKind::Format,
          "camera stream: pixel buffer disagrees with frames x height x width");
  for (std::size_t i = 1; i < cam.timestamps.size(); ++i)
    if (!(cam.timestamps[i] > cam.timestamps[i - 1]))
      fail(ErrorKind::Format, "camera stream: timestamps not strictly increasing at frame " + std::to_string(i));

  ImageStream out;
  out.rate_hz = cam_hz;
  out.height = cam.height;
  out.width = cam.width;
  const std::size_t plane = cam.height * cam.width;
  auto push = [&](std::size_t i) {
    out.timestamps.push_back(cam.timestamps[i]);
    out.pixels.insert(out.pixels.end(), cam.pixels.begin() + static_cast<std::ptrdiff_t>(i * plane),
                      cam.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
  };
  if (std::abs(cam.rate_hz - cam_hz) < 1e-9) {
    for (std::size_t i = 0; i < cam.frames(); ++i)
      if (cam.timestamps[i] >= t_start - kTimeEps && cam.timestamps[i] <= t_end + kTimeEps) push(i);
  } else {
    std::size_t i = 0;
    for (std::size_t j = 0;; ++j) {
      const double t = t_start + static_cast<double>(j) / cam_hz;
      if (t > t_end + kTimeEps) break;
      while (i + 1 < cam.frames() && std::abs(cam.timestamps[i + 1] - t) < std::abs(cam.timestamps[i] - t)) ++i;
      out.timestamps.push_back(t);
      out.pixels.insert(out.pixels.end(), cam.pixels.begin() + static_cast<std::ptrdiff_t>(i * plane),
                        cam.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
    }
  }
  require(out.frames() > 0, ErrorKind::Alignment, "camera stream does not overlap the common time interval");
  return out;
}

}  // namespace

Image ImageStream::frame(std::size_t i) const {
  const std::size_t plane = height * width;
  Image img{height, width, {}};
  img.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(i * plane),
                    pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
  return img;
}

std::size_t ChannelMap::width() const {
  std::size_t w = 0;
  for (const auto& [name, n] : entries) w += n;
  return w;
}

ChannelMap ChannelMap::standard() {
  return ChannelMap{{{"pose", 7}, {"angvel", 3}, {"linacc", 3}, {"shock", 4}, {"rpm", 4}, {"reserved", 6}}};
}

std::size_t ChannelMap::offset_of(const std::string& name) const {
  std::size_t off = 0;
  for (const auto& [n, w] : entries) {
    if (n == name) return off;
    off += w;
  }
  fail(ErrorKind::Config, "channel map has no entry '" + name + "'");
}

SyncedTrajectory synchronize(const Trajectory& traj, const SyncOptions& opts) {
  require(opts.hi_hz > 0 && opts.lo_hz > 0 && opts.cam_hz > 0, ErrorKind::Config, "synchronize: rates must be positive");
  const double ratio_f = opts.hi_hz / opts.lo_hz;
  const auto ratio = static_cast<std::size_t>(std::llround(ratio_f));
  require(ratio >= 1 && std::abs(ratio_f - static_cast<double>(ratio)) < 1e-9, ErrorKind::Config,
          "synchronize: hi_hz must be an integer multiple of lo_hz");

  for (const auto& s : traj.loco) validate(s);
  validate(traj.action);
  require(traj.action.channels == 2, ErrorKind::Format, "action stream must have 2 channels");

  double t_start = traj.action.timestamps.front();
  double t_end = traj.action.timestamps.back();
  for (const auto& s : traj.loco) {
    t_start = std::max(t_start, s.timestamps.front());
    t_end = std::min(t_end, s.timestamps.back());
  }
  require(t_end > t_start, ErrorKind::Alignment, "streams of '" + traj.source_id + "' share no common time interval");

  const auto n_hi = static_cast<std::size_t>(std::floor((t_end - t_start) * opts.hi_hz + kTimeEps)) + 1;
  const std::size_t n_lo = n_hi / ratio;
  require(n_lo >= 1, ErrorKind::Alignment, "common interval of '" + traj.source_id + "' shorter than one output frame");

  SyncedTrajectory out;
  out.source_id = traj.source_id;
  out.lo_hz = opts.lo_hz;
  std::vector<double> grid(n_lo);
  for (std::size_t j = 0; j < n_lo; ++j) grid[j] = t_start + static_cast<double>(j) / opts.lo_hz;

  const std::size_t width = opts.channel_map.width();
  out.loco.name = "loco";
  out.loco.rate_hz = opts.lo_hz;
  out.loco.channels = width;
  out.loco.timestamps = grid;
  out.loco.values.assign(n_lo * width, 0.0f);
  out.loco.interp = Interp::Linear;

  std::vector<double> hi;
  std::size_t col = 0;
  for (const auto& [name, count] : opts.channel_map.entries) {
    if (name.rfind("reserved", 0) == 0) {
      col += count;
      continue;
    }
    auto it = std::find_if(traj.loco.begin(), traj.loco.end(), [&](const ModalityStream& s) { return s.name == name; });
    require(it != traj.loco.end(), ErrorKind::Format, "trajectory '" + traj.source_id + "' has no locomotion stream '" + name + "'");
    require(it->channels == count, ErrorKind::Format,
            "stream '" + name + "' has " + std::to_string(it->channels) + " channels, channel map expects " + std::to_string(count));
    for (std::size_t ch = 0; ch < count; ++ch) {
      upsample(*it, ch, it->interp, t_start, opts.hi_hz, n_hi, hi);
      block_mean(hi, ratio, n_lo, width, col + ch, out.loco.values);
    }
    col += count;
  }

  out.action.name = "action";
  out.action.rate_hz = opts.lo_hz;
  out.action.channels = 2;
  out.action.timestamps = grid;
  out.action.values.assign(n_lo * 2, 0.0f);
  out.action.interp = Interp::Hold;
  for (std::size_t ch = 0; ch < 2; ++ch) {
    upsample(traj.action, ch, Interp::Hold, t_start, opts.hi_hz, n_hi, hi);
    block_mean(hi, ratio, n_lo, 2, ch, out.action.values);
  }

  out.obs = resample_camera(traj.obs, opts.cam_hz, t_start, t_end);
  return out;
}

std::size_t triplet_count(std::size_t frames, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) fail(ErrorKind::Config, "triplet window and stride must be positive");
  if (frames < window) return 0;
  return (frames - window) / stride + 1;
}

std::vector<TripletSample> window_triplets(const SyncedTrajectory& traj, const WindowOptions& opts) {
  require(opts.window_s > 0 && opts.stride_s > 0, ErrorKind::Config, "window and stride must be positive");
  const auto window = static_cast<std::size_t>(std::llround(opts.window_s * traj.lo_hz));
  const auto stride = static_cast<std::size_t>(std::llround(opts.stride_s * traj.lo_hz));
  require(traj.action.frames() == traj.loco.frames(), ErrorKind::Format, "trajectory is not synchronized");
  const std::size_t count = triplet_count(traj.loco.frames(), window, stride);
  const std::size_t lw = traj.loco.channels;

  std::vector<TripletSample> out;
  out.reserve(count);
  std::size_t cam = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t start = i * stride;
    TripletSample t;
    t.source_id = traj.source_id;
    t.t0 = traj.loco.timestamps[start];
    t.window = window;
    t.loco_channels = lw;
    t.s.assign(traj.loco.values.begin() + static_cast<std::ptrdiff_t>(start * lw),
               traj.loco.values.begin() + static_cast<std::ptrdiff_t>((start + window) * lw));
    t.c.assign(traj.action.values.begin() + static_cast<std::ptrdiff_t>(start * 2),
               traj.action.values.begin() + static_cast<std::ptrdiff_t>((start + window) * 2));
    while (cam < traj.obs.frames() && traj.obs.timestamps[cam] < t.t0 - kTimeEps) ++cam;
    require(cam < traj.obs.frames(), ErrorKind::Format,
            "no camera frame at or after t0=" + std::to_string(t.t0) + " in '" + traj.source_id + "'");
    t.o = crop_lower_half(traj.obs.frame(cam));
    out.push_back(std::move(t));
  }
  return out;
}

Image crop_lower_half(const Image& image) {
  require(image.height > 0 && image.width > 0, ErrorKind::Dimension, "crop_lower_half: empty image");
  // Padding an odd-height image with a duplicate top row and then taking the
  // lower half keeps rows [(H-1)/2, H).
  const std::size_t first = image.height / 2;
  Image out{image.height - first, image.width, {}};
  out.pixels.assign(image.pixels.begin() + static_cast<std::ptrdiff_t>(first * image.width), image.pixels.end());
  return out;
}

}  // namespace locoalign::traj
