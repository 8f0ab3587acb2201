// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient-check cases shared by the unit tests and the acceptance runner.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/contrastive.hpp"
#include "core/gradcheck.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

namespace testutil {

using namespace locoalign;
using namespace locoalign::ad;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  Rng rng(seed);
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
struct Precision;
template <>
struct Precision<float> {
  static constexpr float step = 1e-3f;
  static constexpr double tol = 1e-3;
};
template <>
struct Precision<double> {
  static constexpr double step = 1e-5;
  static constexpr double tol = 1e-6;
};

/// Contracts op output with a fixed random weight so every output coordinate
/// contributes a distinct gradient.
template <typename T>
Tensor<T> probe(Tape<T>& tape, const Tensor<T>& y, std::uint64_t seed) {
  auto w = random_tensor<T>(y.shape(), seed, -1.0, 1.0, false);
  return sum(tape, mul(tape, y, w));
}

template <typename T>
GradCheckResult run_op_check(std::vector<Tensor<T>> inputs, const std::function<Tensor<T>(Tape<T>&, const std::vector<Tensor<T>>&)>& op) {
  auto fn = [&](Tape<T>& tape) { return probe(tape, op(tape, inputs), 99); };
  return grad_check<T>(fn, inputs, Precision<T>::step);
}

/// Values in [0.2, 1] with random sign: keeps relu away from its kink.
template <typename T>
Tensor<T> off_kink(Shape shape, std::uint64_t seed) {
  auto t = random_tensor<T>(shape, seed, 0.2, 1.0);
  Rng rng(seed ^ 0x55);
  for (auto& x : t.mutable_data())
    if (rng.uniform() < 0.5) x = -x;
  return t;
}

struct OpCheck {
  std::string name;
  GradCheckResult result;
};

template <typename T>
std::vector<OpCheck> op_gradient_checks() {
  using V = std::vector<Tensor<T>>;
  std::vector<OpCheck> out;
  auto check_op = [&](const std::string& name, std::vector<Tensor<T>> inputs,
                      const std::function<Tensor<T>(Tape<T>&, const V&)>& op) {
    out.push_back({name, run_op_check<T>(std::move(inputs), op)});
  };
  check_op("add", {random_tensor<T>({3, 4}, 1), random_tensor<T>({3, 4}, 2)},
              [](Tape<T>& t, const V& in) { return add(t, in[0], in[1]); });
  check_op("sub", {random_tensor<T>({3, 4}, 1), random_tensor<T>({3, 4}, 2)},
              [](Tape<T>& t, const V& in) { return sub(t, in[0], in[1]); });
  check_op("mul", {random_tensor<T>({3, 4}, 1), random_tensor<T>({3, 4}, 2)},
              [](Tape<T>& t, const V& in) { return mul(t, in[0], in[1]); });
  check_op("affine", {random_tensor<T>({5}, 3)}, [](Tape<T>& t, const V& in) { return affine(t, in[0], T(1.5), T(-0.3)); });
  check_op("scale", {random_tensor<T>({2, 3}, 4)}, [](Tape<T>& t, const V& in) { return scale(t, in[0], T(0.7)); });
  check_op("mul_scalar", {random_tensor<T>({2, 3}, 5), random_tensor<T>({1}, 6)},
              [](Tape<T>& t, const V& in) { return mul_scalar(t, in[0], in[1]); });
  check_op("exp", {random_tensor<T>({4, 2}, 7)}, [](Tape<T>& t, const V& in) { return exp(t, in[0]); });
  check_op("relu", {off_kink<T>({4, 3}, 8)}, [](Tape<T>& t, const V& in) { return relu(t, in[0]); });
  check_op("sigmoid", {random_tensor<T>({4, 3}, 9, -3, 3)}, [](Tape<T>& t, const V& in) { return sigmoid(t, in[0]); });
  check_op("tanh", {random_tensor<T>({4, 3}, 10, -2, 2)}, [](Tape<T>& t, const V& in) { return tanh(t, in[0]); });
  check_op("reshape", {random_tensor<T>({3, 4}, 11)}, [](Tape<T>& t, const V& in) { return reshape(t, in[0], {4, 3}); });
  check_op("transpose", {random_tensor<T>({3, 4}, 12)}, [](Tape<T>& t, const V& in) { return transpose(t, in[0]); });
  check_op("diag", {random_tensor<T>({4, 4}, 13)}, [](Tape<T>& t, const V& in) { return diag(t, in[0]); });
  check_op("sum", {random_tensor<T>({3, 4}, 14)}, [](Tape<T>& t, const V& in) { return sum(t, in[0]); });
  check_op("mean", {random_tensor<T>({3, 4}, 15)}, [](Tape<T>& t, const V& in) { return mean(t, in[0]); });
  check_op("concat_cols", {random_tensor<T>({3, 2}, 16), random_tensor<T>({3, 4}, 17)},
              [](Tape<T>& t, const V& in) { return concat_cols(t, in[0], in[1]); });
  check_op("mean_pool", {random_tensor<T>({2, 3, 5}, 18)}, [](Tape<T>& t, const V& in) { return mean_pool(t, in[0]); });
  check_op("mean_pool rank 2", {random_tensor<T>({3, 5}, 19)}, [](Tape<T>& t, const V& in) { return mean_pool(t, in[0]); });
  check_op("matmul", {random_tensor<T>({3, 4}, 20), random_tensor<T>({4, 2}, 21)},
              [](Tape<T>& t, const V& in) { return matmul(t, in[0], in[1]); });
  check_op("linear", {random_tensor<T>({3, 4}, 22), random_tensor<T>({5, 4}, 23), random_tensor<T>({5}, 24)},
              [](Tape<T>& t, const V& in) { return linear(t, in[0], in[1], in[2]); });
  check_op("linear no bias", {random_tensor<T>({3, 4}, 25), random_tensor<T>({5, 4}, 26)},
              [](Tape<T>& t, const V& in) { return linear(t, in[0], in[1]); });
  check_op("conv1d", {random_tensor<T>({2, 3, 9}, 27), random_tensor<T>({4, 3, 3}, 28)},
              [](Tape<T>& t, const V& in) { return conv1d(t, in[0], in[1], 2, 1); });
  check_op("conv1d rank 2", {random_tensor<T>({3, 8}, 29), random_tensor<T>({2, 3, 5}, 30)},
              [](Tape<T>& t, const V& in) { return conv1d(t, in[0], in[1], 1, 2); });
  check_op("conv2d", {random_tensor<T>({2, 2, 6, 5}, 31), random_tensor<T>({3, 2, 3, 3}, 32), random_tensor<T>({3}, 33)},
              [](Tape<T>& t, const V& in) { return conv2d(t, in[0], in[1], in[2], 2, 1); });
  check_op("conv2d no bias", {random_tensor<T>({1, 2, 5, 5}, 34), random_tensor<T>({2, 2, 3, 3}, 35)},
              [](Tape<T>& t, const V& in) { return conv2d(t, in[0], in[1], Tensor<T>(), 1, 0); });
  check_op("group_norm", {random_tensor<T>({2, 4, 6}, 36), random_tensor<T>({4}, 37, 0.5, 1.5), random_tensor<T>({4}, 38)},
              [](Tape<T>& t, const V& in) { return group_norm(t, in[0], 2, in[1], in[2]); });
  check_op("group_norm no affine", {random_tensor<T>({3, 6}, 39)},
              [](Tape<T>& t, const V& in) { return group_norm(t, in[0], 3, Tensor<T>(), Tensor<T>()); });
  check_op("instance_norm", {random_tensor<T>({2, 3, 7}, 40)}, [](Tape<T>& t, const V& in) { return instance_norm(t, in[0]); });
  check_op("channel_stats", {random_tensor<T>({2, 3, 7}, 41)}, [](Tape<T>& t, const V& in) { return channel_stats(t, in[0]); });
  check_op("l2_normalize", {random_tensor<T>({3, 4}, 42)}, [](Tape<T>& t, const V& in) { return l2_normalize(t, in[0]); });
  check_op("log_softmax", {random_tensor<T>({3, 5}, 43, -2, 2)}, [](Tape<T>& t, const V& in) { return log_softmax(t, in[0]); });
  return out;
}

inline std::vector<traj::TripletSample> random_triplets(const model::ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<traj::TripletSample> out(n);
  for (auto& s : out) {
    s.window = cfg.loco.window;
    s.loco_channels = cfg.loco.in_channels;
    s.o.height = cfg.obs.height;
    s.o.width = cfg.obs.width;
    for (std::size_t i = 0; i < s.o.height * s.o.width; ++i) s.o.pixels.push_back(static_cast<float>(rng.uniform()));
    for (std::size_t i = 0; i < s.window * s.loco_channels; ++i) s.s.push_back(static_cast<float>(rng.normal()));
    for (std::size_t i = 0; i < s.window; ++i) {
      s.c.push_back(static_cast<float>(rng.uniform()));
      s.c.push_back(static_cast<float>(rng.uniform(-1, 1)));
    }
  }
  return out;
}

/// Full pipeline loss: encoders, fusion, projections, cosine similarity and
/// the symmetric loss with the learnable temperature.
template <typename T>
Tensor<T> pipeline_loss(Tape<T>& tape, const model::ModelConfig& cfg, const model::ParamStore<T>& p,
                        const std::vector<traj::TripletSample>& batch) {
  std::vector<const traj::Image*> imgs;
  std::vector<const std::vector<float>*> acts, locos;
  for (const auto& s : batch) {
    imgs.push_back(&s.o);
    acts.push_back(&s.c);
    locos.push_back(&s.s);
  }
  model::Model<T> net(cfg, p);
  auto vo = net.encode_observation(tape, model::image_batch<T>(imgs));
  auto vc = net.encode_action(tape, model::sequence_batch<T>(acts, cfg.action.window, 2));
  auto vs = net.encode_locomotion(tape, model::sequence_batch<T>(locos, cfg.loco.window, cfg.loco.in_channels));
  auto vm = net.fuse(tape, vo, vc);
  auto sim = contrastive::similarity_matrix(tape, net.project_loco(tape, vs), net.project_joint(tape, vm));
  return contrastive::contrastive_loss(tape, sim, net.logit_scale()).normalized;
}

/// Every parameter of a narrow model is an input; the batch has 4 samples.
template <typename T>
GradCheckResult full_loss_check(T step = Precision<T>::step) {
  const auto cfg = model::ModelConfig::tiny(8, 16, 27, 48);
  const auto ck = model::init_params(cfg, 11);
  auto params = ck.params.cast<T>(true);
  // Perturb away from the zero-bias init so every parameter gets a generic gradient.
  Rng rng(3);
  for (auto& [name, t] : params)
    for (auto& v : t.mutable_data()) v += static_cast<T>(0.05 * rng.normal());
  const auto batch = random_triplets(cfg, 4, 21);
  std::vector<Tensor<T>> inputs;
  for (auto& [name, t] : params) inputs.push_back(t);
  return grad_check<T>([&](Tape<T>& tape) { return pipeline_loss<T>(tape, cfg, params, batch); }, inputs, step);
}

}  // namespace testutil
