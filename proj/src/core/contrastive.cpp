// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/contrastive.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "core/io.hpp"
#include "core/rng.hpp"

namespace locoalign::contrastive {

using nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
ad::Tensor<T> similarity_matrix(ad::Tape<T>& tape, const ad::Tensor<T>& vs, const ad::Tensor<T>& vm) {
  if (vs.rank() != 2 || vm.rank() != 2 || vs.dim(1) != vm.dim(1))
    fail(ErrorKind::Dimension, "similarity_matrix: incompatible embeddings " + ad::shape_str(vs.shape()) + " and " +
                                   ad::shape_str(vm.shape()));
  auto zs = ad::l2_normalize(tape, vs);
  auto zm = ad::l2_normalize(tape, vm);
  return ad::matmul(tape, zs, ad::transpose(tape, zm));
}

template <typename T>
LossTerms<T> contrastive_loss(ad::Tape<T>& tape, const ad::Tensor<T>& sim, const ad::Tensor<T>& logit_scale, LossForm form) {
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1) || sim.dim(0) < 2)
    fail(ErrorKind::Dimension, "contrastive_loss: needs an n x n similarity matrix with n >= 2, got " + ad::shape_str(sim.shape()));
  const std::size_t n = sim.dim(0);
  auto logits = ad::mul_scalar(tape, sim, ad::exp(tape, logit_scale));
  auto row = ad::diag(tape, ad::log_softmax(tape, logits));
  auto col = ad::diag(tape, ad::log_softmax(tape, ad::transpose(tape, logits)));
  if (form == LossForm::Literal) {
    row = ad::exp(tape, row);
    col = ad::exp(tape, col);
  }
  auto row_sum = ad::sum(tape, row);
  auto col_sum = ad::sum(tape, col);
  LossTerms<T> out;
  out.raw = ad::scale(tape, ad::add(tape, row_sum, col_sum), T(-1));
  out.normalized = ad::scale(tape, out.raw, T(1) / static_cast<T>(2 * n));
  out.row_mean = -static_cast<double>(row_sum.item()) / static_cast<double>(n);
  out.col_mean = -static_cast<double>(col_sum.item()) / static_cast<double>(n);
  return out;
}

template <typename T>
LossTerms<T> contrastive_loss(ad::Tape<T>& tape, const ad::Tensor<T>& sim, T tau, LossForm form) {
  require(tau > T(0), ErrorKind::Config, "contrastive_loss: tau must be positive");
  return contrastive_loss(tape, sim, ad::Tensor<T>::scalar(static_cast<T>(std::log(1.0 / static_cast<double>(tau)))), form);
}

template ad::Tensor<float> similarity_matrix(ad::Tape<float>&, const ad::Tensor<float>&, const ad::Tensor<float>&);
template ad::Tensor<double> similarity_matrix(ad::Tape<double>&, const ad::Tensor<double>&, const ad::Tensor<double>&);
template LossTerms<float> contrastive_loss(ad::Tape<float>&, const ad::Tensor<float>&, const ad::Tensor<float>&, LossForm);
template LossTerms<double> contrastive_loss(ad::Tape<double>&, const ad::Tensor<double>&, const ad::Tensor<double>&, LossForm);
template LossTerms<float> contrastive_loss(ad::Tape<float>&, const ad::Tensor<float>&, float, LossForm);
template LossTerms<double> contrastive_loss(ad::Tape<double>&, const ad::Tensor<double>&, double, LossForm);

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(batch >= 2, ErrorKind::Config, "batch size must be >= 2 (contrast needs negatives)");
  require(epochs >= 1, ErrorKind::Config, "epochs must be >= 1");
  require(base_lr > 0 && peak_lr > 0, ErrorKind::Config, "learning rates must be positive");
  require(warmup_fraction >= 0 && warmup_fraction <= 1, ErrorKind::Config, "warmup_fraction must lie in [0,1]");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0, ErrorKind::Config, "invalid Adam hyper-parameters");
}

json TrainConfig::to_json() const {
  return {{"batch", batch},
          {"epochs", epochs},
          {"base_lr", base_lr},
          {"peak_lr", peak_lr},
          {"warmup_fraction", warmup_fraction},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"seed", seed},
          {"mask_action", mask_action},
          {"loss_form", loss_form == LossForm::InfoNCE ? "infonce" : "literal"}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.mask_action = j.value("mask_action", c.mask_action);
    const auto form = j.value("loss_form", std::string("infonce"));
    if (form == "infonce") c.loss_form = LossForm::InfoNCE;
    else if (form == "literal") c.loss_form = LossForm::Literal;
    else fail(ErrorKind::Config, "unknown loss_form '" + form + "'");
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("train config: ") + e.what());
  }
  return c;
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return cfg.peak_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * frac;
}

Adam::Adam(const model::ParamStore<float>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params) {
    m_.emplace_back(t.numel(), 0.0f);
    v_.emplace_back(t.numel(), 0.0f);
  }
}

void Adam::step(model::ParamStore<float>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& [name, t] : params) {
    auto& m = m_.at(k);
    auto& v = v_.at(k);
    ++k;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

std::vector<float> zero_actions(std::size_t window) { return std::vector<float>(window * 2, 0.0f); }

namespace {

struct BatchTensors {
  ad::Tensor<float> images, actions, loco;
};

BatchTensors assemble(const model::ModelConfig& cfg, const std::vector<const traj::TripletSample*>& batch, bool mask_action) {
  std::vector<const traj::Image*> imgs;
  std::vector<const std::vector<float>*> acts, locos;
  const auto zeros = zero_actions(cfg.action.window);
  for (const auto* s : batch) {
    imgs.push_back(&s->o);
    acts.push_back(mask_action ? &zeros : &s->c);
    locos.push_back(&s->s);
  }
  return {model::image_batch<float>(imgs), model::sequence_batch<float>(acts, cfg.action.window, 2),
          model::sequence_batch<float>(locos, cfg.loco.window, cfg.loco.in_channels)};
}

LossTerms<float> forward_loss(ad::Tape<float>& tape, const model::Checkpoint& ckpt, const BatchTensors& b, LossForm form) {
  model::Model<float> net(ckpt.config, ckpt.params);
  auto vo = net.encode_observation(tape, b.images);
  auto vc = net.encode_action(tape, b.actions);
  auto vm = net.fuse(tape, vo, vc);
  auto vs = net.encode_locomotion(tape, b.loco);
  auto sim = similarity_matrix(tape, net.project_loco(tape, vs), net.project_joint(tape, vm));
  return contrastive_loss(tape, sim, net.logit_scale(), form);
}

void clamp_temperature(model::Checkpoint& ckpt) {
  auto& ls = ckpt.params.get("logit_scale");
  const double lo = std::log(1.0 / ckpt.config.tau_max);
  const double hi = std::log(1.0 / ckpt.config.tau_min);
  auto d = ls.mutable_data();
  d[0] = static_cast<float>(std::clamp(static_cast<double>(d[0]), lo, hi));
}

}  // namespace

StepResult train_step(model::Checkpoint& ckpt, Adam& opt, const std::vector<const traj::TripletSample*>& batch, double lr,
                      bool mask_action, LossForm form) {
  require(batch.size() >= 2, ErrorKind::Usage, "train_step: batch size must be >= 2");
  const auto tensors = assemble(ckpt.config, batch, mask_action);
  ckpt.params.zero_grad();
  ad::Tape<float> tape;
  auto loss = forward_loss(tape, ckpt, tensors, form);
  StepResult r{loss.raw.item(), loss.normalized.item(), ckpt.tau()};
  if (!std::isfinite(r.loss_raw)) fail(ErrorKind::Numeric, "train_step: non-finite loss");
  tape.backward(loss.normalized);
  opt.step(ckpt.params, lr);
  clamp_temperature(ckpt);
  return r;
}

StepResult evaluate_batch(const model::Checkpoint& ckpt, const std::vector<const traj::TripletSample*>& batch, bool mask_action,
                          LossForm form) {
  require(batch.size() >= 2, ErrorKind::Usage, "evaluate_batch: batch size must be >= 2");
  ad::Tape<float> tape(false);
  auto loss = forward_loss(tape, ckpt, assemble(ckpt.config, batch, mask_action), form);
  return {loss.raw.item(), loss.normalized.item(), ckpt.tau()};
}

PretrainResult pretrain(const data::Dataset& ds, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                        const fs::path& out_dir, const ProgressFn& progress) {
  cfg.validate();
  require(ds.size() > 0, ErrorKind::Usage, "pretrain: dataset is empty");
  require(ds.size() >= 2, ErrorKind::Usage, "pretrain: dataset needs at least 2 samples");

  PretrainResult result;
  result.final_ckpt = model::init_params(mcfg, derive_seed(cfg.seed, "init"));
  Adam opt(result.final_ckpt.params, cfg.beta1, cfg.beta2, cfg.adam_eps);

  const std::size_t n = ds.size();
  const std::size_t batch = std::min(cfg.batch, n);
  std::size_t per_epoch = n / batch;
  if (n % batch >= 2) ++per_epoch;
  const auto warmup_steps = static_cast<std::size_t>(std::llround(cfg.warmup_fraction * static_cast<double>(cfg.epochs))) * per_epoch;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");

  double best = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(shuffle_seed, epoch));
    const auto order = rng.permutation(n);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(n, begin + batch);
      std::vector<const traj::TripletSample*> items;
      for (std::size_t i = begin; i < end; ++i) items.push_back(&ds.samples[order[i]]);
      const double lr = learning_rate(cfg, step, warmup_steps);
      const auto r = train_step(result.final_ckpt, opt, items, lr, cfg.mask_action, cfg.loss_form);
      LossRecord rec{step, epoch, lr, r.loss_raw, r.loss_norm, r.tau};
      result.curve.push_back(rec);
      if (progress) progress(rec);
      epoch_sum += r.loss_norm;
      ++epoch_steps;
      ++step;
    }
    const double mean = epoch_sum / static_cast<double>(epoch_steps);
    result.epoch_loss.push_back(mean);
    if (mean < best) {
      best = mean;
      result.best_ckpt.config = result.final_ckpt.config;
      result.best_ckpt.seed = result.final_ckpt.seed;
      result.best_ckpt.params = result.final_ckpt.params.clone();
    }
  }

  if (!out_dir.empty()) {
    io::ensure_dir(out_dir);
    write_loss_curve(out_dir / "loss_curve.csv", result.curve);
    json meta{{"train", cfg.to_json()}, {"model", mcfg.to_json()}, {"dataset_count", n}, {"dataset_seed", ds.manifest.seed}};
    io::write_text(out_dir / "train_config.json", meta.dump(2) + "\n");
    model::save_checkpoint(out_dir / "final", result.final_ckpt);
    model::save_checkpoint(out_dir / "best", result.best_ckpt);
  }
  return result;
}

void write_loss_curve(const fs::path& path, const std::vector<LossRecord>& curve) {
  std::ostringstream os;
  os << "step,epoch,lr,loss_raw,loss_norm,tau\n";
  char line[256];
  for (const auto& r : curve) {
    std::snprintf(line, sizeof(line), "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.step, r.epoch, r.lr, r.loss_raw, r.loss_norm, r.tau);
    os << line;
  }
  io::write_text(path, os.str());
}

std::vector<LossRecord> read_loss_curve(const fs::path& path) {
  std::istringstream is(io::read_text(path));
  std::string line;
  std::getline(is, line);
  if (line != "step,epoch,lr,loss_raw,loss_norm,tau") fail(ErrorKind::Format, path.string() + ": unexpected header");
  std::vector<LossRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRecord r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf", &r.step, &r.epoch, &r.lr, &r.loss_raw, &r.loss_norm, &r.tau) != 6)
      fail(ErrorKind::Format, path.string() + ": malformed row '" + line + "'");
    out.push_back(r);
  }
  return out;
}

}  // namespace locoalign::contrastive
