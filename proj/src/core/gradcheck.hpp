// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient verification. The error metric per coordinate
// is |analytic - numeric| / max(1, |numeric|); the check reports the maximum.
//
// A central difference across a ReLU kink measures an average of two slopes,
// not the derivative at the point. Coordinates whose +step or -step
// evaluation lands on a different ReLU pattern than the unperturbed point are
// counted in `kinks` and left out of the maximum.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace locoalign::ad {

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;  // compared coordinates
  std::size_t kinks = 0;        // skipped: the stencil crossed a kink
};

/// `fn` builds a scalar loss from `inputs` on the given tape. Every input must
/// require grad. The inputs are perturbed in place and restored.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(Tape<T>&)>& fn, std::vector<Tensor<T>>& inputs, T step) {
  require(step > T(0), ErrorKind::Usage, "grad_check: step must be positive");
  for (auto& in : inputs) {
    require(in.requires_grad(), ErrorKind::Usage, "grad_check: every input must require grad");
    in.zero_grad();
  }
  {
    Tape<T> tape;
    auto loss = fn(tape);
    tape.backward(loss);
  }
  GradCheckResult result;
  std::uint64_t signature = 0;
  auto eval = [&]() {
    Tape<T> quiet(false);
    const auto v = static_cast<double>(fn(quiet).item());
    signature = quiet.branch_signature();
    return v;
  };
  eval();
  const std::uint64_t reference = signature;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    std::vector<T> analytic(in.grad().begin(), in.grad().end());
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      data[i] = saved + step;
      const double up = eval();
      const bool up_same = signature == reference;
      data[i] = saved - step;
      const double down = eval();
      const bool down_same = signature == reference;
      data[i] = saved;
      if (!up_same || !down_same) {
        ++result.kinks;
        continue;
      }
      // Divide by the step that was actually applied after rounding.
      const double applied = static_cast<double>(static_cast<T>(saved + step)) - static_cast<double>(static_cast<T>(saved - step));
      const double numeric = (up - down) / applied;
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_error) {
        result.max_error = err;
        result.worst_input = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace locoalign::ad
