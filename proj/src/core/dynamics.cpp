// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "core/contrastive.hpp"
#include "core/embed.hpp"
#include "core/io.hpp"
#include "core/rng.hpp"

namespace locoalign::tasks {

using nlohmann::json;
namespace fs = std::filesystem;
using ad::Tensor;
using ad::Tape;

namespace {

using Quat = std::array<double, 4>;  // x, y, z, w

Quat qmul(const Quat& a, const Quat& b) {
  return {a[3] * b[0] + a[0] * b[3] + a[1] * b[2] - a[2] * b[1], a[3] * b[1] - a[0] * b[2] + a[1] * b[3] + a[2] * b[0],
          a[3] * b[2] + a[0] * b[1] - a[1] * b[0] + a[2] * b[3], a[3] * b[3] - a[0] * b[0] - a[1] * b[1] - a[2] * b[2]};
}

Quat qconj(const Quat& q) { return {-q[0], -q[1], -q[2], q[3]}; }

Quat qnormalize(const Quat& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!(n > 1e-12)) fail(ErrorKind::Degenerate, "quaternion with zero norm");
  return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

std::array<double, 3> rotate(const Quat& q, const std::array<double, 3>& v) {
  const Quat p{v[0], v[1], v[2], 0.0};
  const Quat r = qmul(qmul(q, p), qconj(q));
  return {r[0], r[1], r[2]};
}

std::size_t channel_width(const traj::ChannelMap& map, const std::string& name) {
  for (const auto& [n, w] : map.entries)
    if (n == name) return w;
  fail(ErrorKind::Config, "channel map has no entry '" + name + "'");
}

// ---------------------------------------------------------------------------
// GRU predictor

constexpr std::size_t kPoseDim = 7;

void init_predictor(model::ParamStore<float>& p, std::size_t h0_in, const PredictorConfig& cfg) {
  const std::uint64_t seed = derive_seed(cfg.seed, "predictor");
  const std::size_t h = cfg.hidden;
  auto uniform = [&](const std::string& name, ad::Shape shape, double bound) {
    Rng rng(derive_seed(seed, name));
    std::vector<float> v(ad::numel_of(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    p.add(name, Tensor<float>(std::move(shape), std::move(v), true));
  };
  const double b = 1.0 / std::sqrt(static_cast<double>(h));
  for (const char* g : {"z", "r", "n"}) {
    uniform(std::string("gru.W") + g, {h, 2}, b);
    uniform(std::string("gru.b") + g, {h}, b);
    uniform(std::string("gru.U") + g, {h, h}, b);
  }
  uniform("gru.bhn", {h}, b);
  uniform("out.weight", {kPoseDim, h}, b);
  p.add("out.bias", Tensor<float>::zeros({kPoseDim}, true));
  if (cfg.hidden_init) {
    uniform("h0.weight", {h, h0_in}, 1.0 / std::sqrt(static_cast<double>(h0_in)));
    p.add("h0.bias", Tensor<float>::zeros({h}, true));
  }
}

/// Runs the GRU over `actions` ([B,2] per step) and returns per-step outputs.
std::vector<Tensor<float>> gru_forward(Tape<float>& tape, const model::ParamStore<float>& p, const PredictorConfig& cfg,
                                       const Tensor<float>& h0_in, const std::vector<Tensor<float>>& actions) {
  const std::size_t batch = actions.front().dim(0);
  Tensor<float> h = cfg.hidden_init ? ad::linear(tape, h0_in, p.get("h0.weight"), p.get("h0.bias"))
                                    : Tensor<float>::zeros({batch, cfg.hidden});
  std::vector<Tensor<float>> out;
  out.reserve(actions.size());
  for (const auto& x : actions) {
    auto z = ad::sigmoid(tape, ad::add(tape, ad::linear(tape, x, p.get("gru.Wz"), p.get("gru.bz")), ad::linear(tape, h, p.get("gru.Uz"))));
    auto r = ad::sigmoid(tape, ad::add(tape, ad::linear(tape, x, p.get("gru.Wr"), p.get("gru.br")), ad::linear(tape, h, p.get("gru.Ur"))));
    auto hn = ad::linear(tape, h, p.get("gru.Un"), p.get("gru.bhn"));
    auto n = ad::tanh(tape, ad::add(tape, ad::linear(tape, x, p.get("gru.Wn"), p.get("gru.bn")), ad::mul(tape, r, hn)));
    h = ad::add(tape, n, ad::mul(tape, z, ad::sub(tape, h, n)));
    out.push_back(ad::linear(tape, h, p.get("out.weight"), p.get("out.bias")));
  }
  return out;
}

/// Per-sample inputs shared by training and prediction.
struct Prepared {
  std::vector<float> h0_rows;  // samples x h0_dim (frozen encoder only)
  std::size_t h0_dim = 0;
};

std::vector<float> standardized_state(const Predictor& p, const DynamicsSample& s) {
  std::vector<float> out(s.state.size());
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = p.state.apply(s.state[d], d);
  return out;
}

/// Embedding standardization as a differentiable linear map (diagonal weight).
Tensor<float> standardize_embedding(Tape<float>& tape, const Standardizer& st, const Tensor<float>& e) {
  const std::size_t d = st.mean.size();
  std::vector<float> w(d * d, 0.0f), b(d);
  for (std::size_t i = 0; i < d; ++i) {
    w[i * d + i] = static_cast<float>(1.0 / st.scale[i]);
    b[i] = static_cast<float>(-st.mean[i] / st.scale[i]);
  }
  return ad::linear(tape, e, Tensor<float>({d, d}, std::move(w)), Tensor<float>({d}, std::move(b)));
}

std::vector<float> raw_embeddings(const model::Checkpoint& encoder, const DynamicsSet& set) {
  std::vector<const std::vector<float>*> seqs;
  for (const auto& s : set.samples) seqs.push_back(&s.history);
  return encode_locomotion(encoder, seqs);
}

/// h0 input rows for a frozen encoder: [standardized embedding, standardized state].
Prepared prepare_frozen(const Predictor& p, const model::Checkpoint& encoder, const DynamicsSet& set) {
  Prepared out;
  if (!p.config.hidden_init) return out;
  const auto emb = raw_embeddings(encoder, set);
  const std::size_t d = encoder.config.out_dim;
  const std::size_t sd = p.config.state_features ? p.state.mean.size() : 0;
  out.h0_dim = d + sd;
  out.h0_rows.reserve(set.samples.size() * out.h0_dim);
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) out.h0_rows.push_back(p.embedding.apply(emb[i * d + k], k));
    if (sd) {
      const auto st = standardized_state(p, set.samples[i]);
      out.h0_rows.insert(out.h0_rows.end(), st.begin(), st.end());
    }
  }
  return out;
}

struct BatchInputs {
  Tensor<float> h0_in;
  std::vector<Tensor<float>> actions;
};

BatchInputs batch_inputs(Tape<float>& tape, const Predictor& p, const model::Checkpoint* live_encoder, const Prepared& prep,
                         const DynamicsSet& set, const std::vector<std::size_t>& idx) {
  const std::size_t b = idx.size();
  BatchInputs in;
  if (p.config.hidden_init) {
    if (live_encoder) {
      model::Model<float> net(live_encoder->config, live_encoder->params);
      std::vector<const std::vector<float>*> seqs;
      for (auto i : idx) seqs.push_back(&set.samples[i].history);
      auto emb = net.encode_locomotion(tape, model::sequence_batch<float>(seqs, set.window, set.channels));
      in.h0_in = standardize_embedding(tape, p.embedding, emb);
      if (p.config.state_features) {
        std::vector<float> rows;
        for (auto i : idx) {
          const auto st = standardized_state(p, set.samples[i]);
          rows.insert(rows.end(), st.begin(), st.end());
        }
        const std::size_t sd = p.state.mean.size();
        in.h0_in = ad::concat_cols(tape, in.h0_in, Tensor<float>({b, sd}, std::move(rows)));
      }
    } else {
      std::vector<float> rows;
      rows.reserve(b * prep.h0_dim);
      for (auto i : idx)
        rows.insert(rows.end(), prep.h0_rows.begin() + static_cast<std::ptrdiff_t>(i * prep.h0_dim),
                    prep.h0_rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * prep.h0_dim));
      in.h0_in = Tensor<float>({b, prep.h0_dim}, std::move(rows));
    }
  }
  for (std::size_t t = 0; t < set.steps; ++t) {
    std::vector<float> a(b * 2);
    for (std::size_t k = 0; k < b; ++k) {
      a[k * 2] = set.samples[idx[k]].actions[t * 2];
      a[k * 2 + 1] = set.samples[idx[k]].actions[t * 2 + 1];
    }
    in.actions.emplace_back(ad::Shape{b, 2}, std::move(a));
  }
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pose arithmetic

const char* quat_diff_name(QuatDiff m) noexcept { return m == QuatDiff::Relative ? "relative" : "additive"; }

QuatDiff parse_quat_diff(const std::string& s) {
  if (s == "additive") return QuatDiff::Additive;
  if (s == "relative") return QuatDiff::Relative;
  fail(ErrorKind::Config, "unknown quaternion differential mode '" + s + "' (expected additive or relative)");
}

std::vector<double> rollout_accumulate(const Pose& initial, const std::vector<double>& diffs, QuatDiff mode) {
  require(diffs.size() % kPoseDim == 0, ErrorKind::Dimension, "rollout_accumulate: differentials must be steps x 7");
  const double n0 = std::sqrt(initial[3] * initial[3] + initial[4] * initial[4] + initial[5] * initial[5] + initial[6] * initial[6]);
  require(std::abs(n0 - 1.0) <= 1e-6, ErrorKind::Degenerate, "rollout_accumulate: initial quaternion is not unit-norm");
  const std::size_t steps = diffs.size() / kPoseDim;
  std::vector<double> out(diffs.size());
  Pose cur = initial;
  for (std::size_t t = 0; t < steps; ++t) {
    const double* d = diffs.data() + t * kPoseDim;
    for (std::size_t k = 0; k < 3; ++k) cur[k] += d[k];
    const Quat prev{cur[3], cur[4], cur[5], cur[6]};
    const Quat q = mode == QuatDiff::Additive ? qnormalize({prev[0] + d[3], prev[1] + d[4], prev[2] + d[5], prev[3] + d[6]})
                                              : qnormalize(qmul(prev, qnormalize({d[3], d[4], d[5], d[6]})));
    for (std::size_t k = 0; k < 4; ++k) cur[3 + k] = q[k];
    std::copy(cur.begin(), cur.end(), out.begin() + static_cast<std::ptrdiff_t>(t * kPoseDim));
  }
  return out;
}

std::vector<double> pose_differentials(const Pose& initial, const std::vector<double>& poses, QuatDiff mode) {
  require(poses.size() % kPoseDim == 0, ErrorKind::Dimension, "pose_differentials: poses must be steps x 7");
  std::vector<double> out(poses.size());
  for (std::size_t t = 0; t < poses.size() / kPoseDim; ++t) {
    const double* cur = poses.data() + t * kPoseDim;
    const double* prev = t == 0 ? initial.data() : cur - kPoseDim;
    double* d = out.data() + t * kPoseDim;
    for (std::size_t k = 0; k < 3; ++k) d[k] = cur[k] - prev[k];
    if (mode == QuatDiff::Additive) {
      for (std::size_t k = 3; k < kPoseDim; ++k) d[k] = cur[k] - prev[k];
    } else {
      const Quat r = qmul(qconj({prev[3], prev[4], prev[5], prev[6]}), {cur[3], cur[4], cur[5], cur[6]});
      std::copy(r.begin(), r.end(), d + 3);
    }
  }
  return out;
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  require(pred.size() == truth.size(), ErrorKind::Dimension,
          "rmse: shapes differ (" + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) + " values)");
  require(!pred.empty(), ErrorKind::Dimension, "rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

PoseErrors pose_errors(const std::vector<double>& pred, const std::vector<double>& truth, std::size_t steps) {
  require(pred.size() == truth.size(), ErrorKind::Dimension, "pose_errors: shapes differ");
  require(steps > 0 && pred.size() % (steps * kPoseDim) == 0 && !pred.empty(), ErrorKind::Dimension,
          "pose_errors: expected samples x steps x 7");
  const std::size_t samples = pred.size() / (steps * kPoseDim);
  PoseErrors e;
  e.joint = rmse(pred, truth);
  double pos = 0.0, quat = 0.0;
  std::vector<double> step_acc(steps, 0.0);
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t k = 0; k < kPoseDim; ++k) {
        const std::size_t i = (s * steps + t) * kPoseDim + k;
        const double sq = (pred[i] - truth[i]) * (pred[i] - truth[i]);
        (k < 3 ? pos : quat) += sq;
        step_acc[t] += sq;
      }
  e.position = std::sqrt(pos / static_cast<double>(samples * steps * 3));
  e.quaternion = std::sqrt(quat / static_cast<double>(samples * steps * 4));
  for (std::size_t t = 0; t < steps; ++t) e.per_step.push_back(std::sqrt(step_acc[t] / static_cast<double>(samples * kPoseDim)));
  return e;
}

// ---------------------------------------------------------------------------
// KBM

json KbmParams::to_json() const {
  return {{"wheelbase", wheelbase}, {"a_max", a_max}, {"drag", drag}, {"max_steer", max_steer}, {"wheel_radius", wheel_radius}};
}

KbmParams KbmParams::from_json(const json& j) {
  KbmParams k;
  try {
    k.wheelbase = j.value("wheelbase", k.wheelbase);
    k.a_max = j.value("a_max", k.a_max);
    k.drag = j.value("drag", k.drag);
    k.max_steer = j.value("max_steer", k.max_steer);
    k.wheel_radius = j.value("wheel_radius", k.wheel_radius);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("kbm config: ") + e.what());
  }
  require(k.wheelbase > 0 && k.a_max > 0 && k.drag >= 0 && k.max_steer > 0 && k.wheel_radius > 0, ErrorKind::Config,
          "kbm parameters must be positive");
  return k;
}

std::vector<double> kbm_baseline(const KbmState& init, const std::vector<float>& actions, const KbmParams& params, double dt) {
  require(actions.size() % 2 == 0, ErrorKind::Dimension, "kbm_baseline: actions must be steps x 2");
  require(dt > 0, ErrorKind::Config, "kbm_baseline: dt must be positive");
  const std::size_t steps = actions.size() / 2;
  std::vector<double> out;
  out.reserve(steps * kPoseDim);
  double x = init.x, y = init.y, th = init.heading, v = std::max(0.0, init.speed);
  for (std::size_t t = 0; t < steps; ++t) {
    const double throttle = std::clamp(static_cast<double>(actions[t * 2]), 0.0, 1.0);
    const double steer = std::clamp(static_cast<double>(actions[t * 2 + 1]), -1.0, 1.0);
    const double omega = v / params.wheelbase * std::tan(steer * params.max_steer);
    const double dth = omega * dt;
    if (std::abs(dth) > 1e-12) {
      x += v / omega * (std::sin(th + dth) - std::sin(th));
      y += v / omega * (std::cos(th) - std::cos(th + dth));
    } else {
      x += v * std::cos(th) * dt;
      y += v * std::sin(th) * dt;
    }
    th += dth;
    v = std::max(0.0, v + (params.a_max * throttle - params.drag * v) * dt);
    out.insert(out.end(), {x, y, init.z, 0.0, 0.0, std::sin(0.5 * th), std::cos(0.5 * th)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictor

void PredictorConfig::validate() const {
  require(history_s > 0 && horizon_s > 0, ErrorKind::Config, "predictor: history and horizon must be positive");
  require(hidden >= 1 && epochs >= 1 && batch >= 1 && lr > 0, ErrorKind::Config, "predictor: invalid training parameters");
}

json PredictorConfig::to_json() const {
  return {{"history_s", history_s},     {"horizon_s", horizon_s}, {"hidden", hidden},
          {"epochs", epochs},           {"batch", batch},         {"lr", lr},
          {"hidden_init", hidden_init}, {"state_features", state_features},
          {"freeze_encoder", freeze_encoder}, {"quat_diff", quat_diff_name(quat_diff)}, {"seed", seed}};
}

PredictorConfig PredictorConfig::from_json(const json& j) {
  PredictorConfig c;
  try {
    c.history_s = j.value("history_s", c.history_s);
    c.horizon_s = j.value("horizon_s", c.horizon_s);
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.hidden_init = j.value("hidden_init", c.hidden_init);
    c.state_features = j.value("state_features", c.state_features);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    c.quat_diff = parse_quat_diff(j.value("quat_diff", std::string(quat_diff_name(c.quat_diff))));
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("predictor config: ") + e.what());
  }
  return c;
}

std::vector<double> DynamicsSet::truth() const {
  std::vector<double> out;
  out.reserve(samples.size() * steps * kPoseDim);
  for (const auto& s : samples) out.insert(out.end(), s.truth.begin(), s.truth.end());
  return out;
}

DynamicsSet make_dynamics_set(const data::Dataset& ds, const PredictorConfig& cfg, double wheel_radius) {
  cfg.validate();
  const auto& m = ds.manifest;
  const auto hist = static_cast<std::size_t>(std::llround(cfg.history_s * m.lo_hz));
  const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon_s * m.lo_hz));
  require(hist >= 1 && steps >= 1 && hist + steps <= m.window, ErrorKind::Config,
          "predictor: history + horizon exceeds the sample window");
  require(channel_width(m.channel_map, "pose") == 7 && channel_width(m.channel_map, "rpm") == 4, ErrorKind::Config,
          "predictor: channel map needs pose(7) and rpm(4)");
  const std::size_t pose_off = m.channel_map.offset_of("pose");
  const std::size_t rpm_off = m.channel_map.offset_of("rpm");
  std::vector<std::size_t> state_cols;
  {
    std::size_t off = 0;
    for (const auto& [name, w] : m.channel_map.entries) {
      if (name != "pose" && name.rfind("reserved", 0) != 0)
        for (std::size_t k = 0; k < w; ++k) state_cols.push_back(off + k);
      off += w;
    }
  }
  const std::size_t c = m.loco_channels;
  const double mps_per_rpm = 2.0 * std::numbers::pi * wheel_radius / 60.0;

  DynamicsSet set;
  set.steps = steps;
  set.window = m.window;
  set.channels = c;
  set.dt = 1.0 / m.lo_hz;
  set.samples.reserve(ds.size());
  for (const auto& s : ds.samples) {
    DynamicsSample d;
    const std::vector<float> history(s.s.begin(), s.s.begin() + static_cast<std::ptrdiff_t>(hist * c));
    d.history = model::replicate_pad(history, hist, c, m.window);
    const float* last = s.s.data() + (hist - 1) * c;
    for (auto col : state_cols) d.state.push_back(last[col]);
    d.actions.assign(s.c.begin() + static_cast<std::ptrdiff_t>(hist * 2), s.c.begin() + static_cast<std::ptrdiff_t>((hist + steps) * 2));
    const std::array<double, 3> p0{last[pose_off], last[pose_off + 1], last[pose_off + 2]};
    const Quat q0inv = qconj(qnormalize({last[pose_off + 3], last[pose_off + 4], last[pose_off + 5], last[pose_off + 6]}));
    for (std::size_t f = hist; f < hist + steps; ++f) {
      const float* row = s.s.data() + f * c + pose_off;
      const auto p = rotate(q0inv, {row[0] - p0[0], row[1] - p0[1], row[2] - p0[2]});
      const Quat q = qmul(q0inv, qnormalize({row[3], row[4], row[5], row[6]}));
      d.truth.insert(d.truth.end(), {p[0], p[1], p[2], q[0], q[1], q[2], q[3]});
    }
    double rpm = 0.0;
    for (std::size_t k = 0; k < 4; ++k) rpm += last[rpm_off + k];
    d.v0 = 0.25 * rpm * mps_per_rpm;
    set.samples.push_back(std::move(d));
  }
  return set;
}

Standardizer Standardizer::fit(const std::vector<double>& rows, std::size_t dim) {
  require(dim > 0 && !rows.empty() && rows.size() % dim == 0, ErrorKind::Dimension, "Standardizer: rows must be n x dim");
  const std::size_t n = rows.size() / dim;
  Standardizer s;
  s.mean.assign(dim, 0.0);
  s.scale.assign(dim, 0.0);
  s.constant.assign(dim, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) s.mean[d] += rows[i * dim + d];
  for (auto& v : s.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) s.scale[d] += (rows[i * dim + d] - s.mean[d]) * (rows[i * dim + d] - s.mean[d]);
  for (std::size_t d = 0; d < dim; ++d) {
    s.scale[d] = std::sqrt(s.scale[d] / static_cast<double>(n));
    if (!(s.scale[d] > 1e-8)) {
      s.scale[d] = 1.0;
      s.constant[d] = true;
    }
  }
  return s;
}

Predictor train_dynamics_predictor(const model::Checkpoint& encoder, const DynamicsSet& train, const PredictorConfig& cfg) {
  cfg.validate();
  require(!train.samples.empty(), ErrorKind::Usage, "train_dynamics_predictor: no training samples");
  require(encoder.config.loco.window == train.window && encoder.config.loco.in_channels == train.channels, ErrorKind::Dimension,
          "train_dynamics_predictor: encoder does not match the dataset window or channels");
  const std::size_t n = train.samples.size();
  const std::size_t steps = train.steps;

  Predictor p;
  p.config = cfg;
  {
    std::vector<double> diffs, states;
    for (const auto& s : train.samples) {
      const auto d = pose_differentials(kIdentityPose, s.truth, cfg.quat_diff);
      diffs.insert(diffs.end(), d.begin(), d.end());
      states.insert(states.end(), s.state.begin(), s.state.end());
    }
    p.target = Standardizer::fit(diffs, kPoseDim);
    if (!train.samples.front().state.empty()) p.state = Standardizer::fit(states, train.samples.front().state.size());
    const auto emb = raw_embeddings(encoder, train);
    p.embedding = Standardizer::fit(std::vector<double>(emb.begin(), emb.end()), encoder.config.out_dim);
  }
  const std::size_t h0_dim = encoder.config.out_dim + (cfg.state_features ? p.state.mean.size() : 0);
  init_predictor(p.params, h0_dim, cfg);

  // Standardized targets, samples x steps x 7.
  std::vector<float> targets;
  targets.reserve(n * steps * kPoseDim);
  for (const auto& s : train.samples) {
    const auto d = pose_differentials(kIdentityPose, s.truth, cfg.quat_diff);
    for (std::size_t i = 0; i < d.size(); ++i) targets.push_back(p.target.apply(d[i], i % kPoseDim));
  }

  model::ParamStore<float> trainable;
  for (auto& [name, t] : p.params) trainable.add(name, t);
  Prepared prep;
  if (cfg.freeze_encoder) {
    prep = prepare_frozen(p, encoder, train);
  } else {
    p.encoder = model::Checkpoint{encoder.config, encoder.seed, encoder.params.clone()};
    for (auto& [name, t] : p.encoder->params)
      if (name.rfind("loco.", 0) == 0) trainable.add("encoder." + name, t);
  }

  contrastive::Adam opt(trainable, 0.9, 0.999, 1e-8);
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "dynamics-shuffle");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(shuffle_seed, epoch));
    const auto order = rng.permutation(n);
    double epoch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::size_t end = std::min(n, begin + cfg.batch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
      const std::size_t b = idx.size();
      trainable.zero_grad();
      Tape<float> tape;
      const auto in = batch_inputs(tape, p, p.encoder ? &*p.encoder : nullptr, prep, train, idx);
      const auto outs = gru_forward(tape, p.params, cfg, in.h0_in, in.actions);
      Tensor<float> total;
      for (std::size_t t = 0; t < steps; ++t) {
        std::vector<float> tg(b * kPoseDim);
        for (std::size_t k = 0; k < b; ++k)
          std::copy_n(targets.begin() + static_cast<std::ptrdiff_t>((idx[k] * steps + t) * kPoseDim), kPoseDim,
                      tg.begin() + static_cast<std::ptrdiff_t>(k * kPoseDim));
        auto diff = ad::sub(tape, outs[t], Tensor<float>({b, kPoseDim}, std::move(tg)));
        auto l = ad::mean(tape, ad::mul(tape, diff, diff));
        total = total.defined() ? ad::add(tape, total, l) : l;
      }
      auto loss = ad::scale(tape, total, 1.0f / static_cast<float>(steps));
      if (!std::isfinite(loss.item())) fail(ErrorKind::Numeric, "dynamics predictor: non-finite loss");
      tape.backward(loss);
      opt.step(trainable, cfg.lr);
      epoch_sum += loss.item();
      ++batches;
    }
    p.epoch_loss.push_back(epoch_sum / static_cast<double>(batches));
  }
  return p;
}

std::vector<double> predict_poses(const Predictor& p, const model::Checkpoint& encoder, const DynamicsSet& set) {
  const model::Checkpoint& enc = p.encoder ? *p.encoder : encoder;
  const Prepared prep = p.encoder ? Prepared{} : prepare_frozen(p, enc, set);
  std::vector<double> out;
  out.reserve(set.samples.size() * set.steps * kPoseDim);
  const std::size_t batch = std::max<std::size_t>(p.config.batch, 1);
  for (std::size_t begin = 0; begin < set.samples.size(); begin += batch) {
    const std::size_t end = std::min(set.samples.size(), begin + batch);
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    Tape<float> tape(false);
    const auto in = batch_inputs(tape, p, p.encoder ? &*p.encoder : nullptr, prep, set, idx);
    const auto outs = gru_forward(tape, p.params, p.config, in.h0_in, in.actions);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::vector<double> diffs(set.steps * kPoseDim);
      for (std::size_t t = 0; t < set.steps; ++t)
        for (std::size_t d = 0; d < kPoseDim; ++d)
          diffs[t * kPoseDim + d] = p.target.invert(outs[t].data()[k * kPoseDim + d], d);
      const auto poses = rollout_accumulate(kIdentityPose, diffs, p.config.quat_diff);
      out.insert(out.end(), poses.begin(), poses.end());
    }
  }
  return out;
}

std::vector<double> kbm_poses(const DynamicsSet& set, const KbmParams& params) {
  std::vector<double> out;
  out.reserve(set.samples.size() * set.steps * kPoseDim);
  for (const auto& s : set.samples) {
    KbmState init;
    init.speed = s.v0;
    const auto poses = kbm_baseline(init, s.actions, params, set.dt);
    out.insert(out.end(), poses.begin(), poses.end());
  }
  return out;
}

const char* baseline_name(Baseline b) noexcept {
  switch (b) {
    case Baseline::Pretrained: return "pretrained";
    case Baseline::Scratch: return "scratch";
    case Baseline::Kbm: return "kbm";
  }
  return "unknown";
}

Baseline parse_baseline(const std::string& s) {
  if (s == "pretrained") return Baseline::Pretrained;
  if (s == "scratch") return Baseline::Scratch;
  if (s == "kbm") return Baseline::Kbm;
  fail(ErrorKind::Usage, "unknown baseline '" + s + "' (expected pretrained, scratch or kbm)");
}

DynamicsReport run_dynamics(Baseline b, const model::Checkpoint& pretrained, const data::Dataset& train, const data::Dataset& test,
                            const PredictorConfig& cfg, const KbmParams& kbm) {
  const auto test_set = make_dynamics_set(test, cfg, kbm.wheel_radius);
  require(!test_set.samples.empty(), ErrorKind::Usage, "eval-dynamics: test split is empty");
  DynamicsReport r;
  r.baseline = baseline_name(b);
  r.samples = test_set.samples.size();
  r.steps = test_set.steps;
  r.dt = test_set.dt;
  std::vector<double> pred;
  if (b == Baseline::Kbm) {
    pred = kbm_poses(test_set, kbm);
  } else {
    const auto train_set = make_dynamics_set(train, cfg, kbm.wheel_radius);
    const model::Checkpoint encoder = b == Baseline::Pretrained
                                          ? pretrained
                                          : model::init_params(pretrained.config, derive_seed(cfg.seed, "scratch-encoder"));
    const auto p = train_dynamics_predictor(encoder, train_set, cfg);
    pred = predict_poses(p, encoder, test_set);
    r.train_loss = p.epoch_loss;
  }
  r.errors = pose_errors(pred, test_set.truth(), test_set.steps);
  return r;
}

void write_dynamics_report(const fs::path& dir, const DynamicsReport& r) {
  io::ensure_dir(dir);
  const std::string stem = "dynamics_" + r.baseline;
  std::ostringstream jl, csv, steps;
  auto rec = [&](const char* metric, double value) {
    jl << json{{"metric", metric}, {"baseline", r.baseline}, {"samples", r.samples}, {"steps", r.steps}, {"value", value}}.dump()
       << "\n";
  };
  rec("rmse", r.errors.joint);
  rec("rmse_position", r.errors.position);
  rec("rmse_quaternion", r.errors.quaternion);
  if (!r.train_loss.empty()) rec("final_train_loss", r.train_loss.back());
  char line[200];
  csv << "baseline,samples,steps,dt,rmse,rmse_position,rmse_quaternion\n";
  std::snprintf(line, sizeof(line), "%s,%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.baseline.c_str(), r.samples, r.steps, r.dt, r.errors.joint,
                r.errors.position, r.errors.quaternion);
  csv << line;
  steps << "step,time_s,rmse\n";
  for (std::size_t t = 0; t < r.errors.per_step.size(); ++t) {
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n", t + 1, static_cast<double>(t + 1) * r.dt, r.errors.per_step[t]);
    steps << line;
  }
  io::write_text(dir / (stem + ".jsonl"), jl.str());
  io::write_text(dir / (stem + "_summary.csv"), csv.str());
  io::write_text(dir / (stem + "_per_step.csv"), steps.str());
  if (!r.train_loss.empty()) {
    std::ostringstream tl;
    tl << "epoch,loss\n";
    for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
      std::snprintf(line, sizeof(line), "%zu,%.9g\n", e, r.train_loss[e]);
      tl << line;
    }
    io::write_text(dir / (stem + "_train_loss.csv"), tl.str());
  }
}

}  // namespace locoalign::tasks
