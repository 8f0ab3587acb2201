// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the tape that records differentiable ops.
//
// A Tensor is a cheap handle onto shared storage. Forward ops never mutate
// their inputs; the only in-place writers are the optimizer (on parameter
// leaves) and the backward pass (on gradient buffers). Precision is a template
// parameter: float for training, double for gradient verification.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core/error.hpp"

namespace locoalign::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    for (std::size_t d : shape) require(d > 0, ErrorKind::Dimension, "tensor dims must be positive: " + shape_str(shape));
    require(numel_of(shape) == data.size(), ErrorKind::Dimension,
            "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  std::span<const T> data() const { return node_->data; }
  /// Writable view; only optimizers and loaders should use this.
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    require(numel() == 1, ErrorKind::Usage, "item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T at(std::size_t i) const { return node_->data.at(i); }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  // Gradient buffers are accumulation state, writable through any handle.
  std::span<T> mutable_grad() const {
    ensure_grad();
    return node_->grad;
  }
  void ensure_grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  }
  void zero_grad() const { node_->grad.assign(node_->data.size(), T(0)); }

  /// Copy with fresh storage (no grad, no tape history).
  Tensor detached(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }

  TensorNode<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of executed ops. Each entry owns a closure that reads the
/// output gradient and accumulates into its inputs' gradients.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// True if an op over these inputs must be recorded.
  bool wants(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs)
      if (t && t->defined() && t->requires_grad()) return true;
    return false;
  }

  void record(std::vector<Tensor<T>> inputs, const Tensor<T>& output, std::function<void()> backward_fn) {
    entries_.push_back(Entry{std::move(inputs), output, std::move(backward_fn)});
  }

  /// Reverse sweep from a scalar loss. Each recorded op is visited at most
  /// once; ops whose output received no gradient are skipped. Leaf gradients
  /// accumulate additively, so callers zero them between steps.
  void backward(const Tensor<T>& loss) {
    require(loss.defined() && loss.numel() == 1, ErrorKind::Usage,
            "backward requires a scalar loss, got shape " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    require(loss.requires_grad(), ErrorKind::Usage, "loss does not depend on any tensor requiring grad");
    require(!consumed_, ErrorKind::Usage, "tape already consumed by a previous backward");
    consumed_ = true;
    Tensor<T> l = loss;
    l.mutable_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      for (auto& in : it->inputs)
        if (in.requires_grad()) in.ensure_grad();
      it->backward();
    }
    // Leaves that took part but sat on a dead path still get a zero buffer.
    for (auto& e : entries_)
      for (auto& in : e.inputs)
        if (in.requires_grad()) in.ensure_grad();
  }

  void clear() {
    entries_.clear();
    consumed_ = false;
    branches_ = 0;
  }

  /// Piecewise ops fold the pattern of which piece each element took into
  /// this hash, so callers can tell whether two evaluations crossed a kink.
  void note_branches(std::uint64_t h) noexcept { branches_ = (branches_ ^ h) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL; }
  std::uint64_t branch_signature() const noexcept { return branches_; }

 private:
  struct Entry {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  bool recording_;
  bool consumed_ = false;
  std::uint64_t branches_ = 0;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data())
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op);
}

/// Convert between precisions (used to run float checkpoints in double mode).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad) {
  std::vector<To> out(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return Tensor<To>(t.shape(), std::move(out), requires_grad);
}

}  // namespace locoalign::ad
