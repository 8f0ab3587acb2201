// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <string>

#include <doctest.h>

#include "core/gradcheck.hpp"
#include "core/ops.hpp"
#include "helpers.hpp"

using namespace locoalign;
using namespace locoalign::ad;
using testutil::random_tensor;

namespace {

template <typename T>
void all_op_gradients() {
  for (const auto& c : testutil::op_gradient_checks<T>()) {
    INFO(c.name << " worst input " << c.result.worst_input << " index " << c.result.worst_index);
    CHECK(c.result.coordinates > 0);
    CHECK(c.result.kinks == 0);
    CHECK(c.result.max_error <= testutil::Precision<T>::tol);
  }
}

}  // namespace

TEST_CASE("every op matches finite differences in 32-bit") { all_op_gradients<float>(); }

TEST_CASE("every op matches finite differences in 64-bit") { all_op_gradients<double>(); }

TEST_CASE("shared inputs accumulate gradients from every use") {
  auto x = random_tensor<double>({2, 3}, 50);
  std::vector<Tensor<double>> in{x};
  auto fn = [&](Tape<double>& t) { return sum(t, mul(t, add(t, in[0], in[0]), in[0])); };
  CHECK(grad_check<double>(fn, in, 1e-5).max_error <= 1e-6);
}

TEST_CASE("group norm of (1, 2, 3) standardizes to (-1.2247, 0, 1.2247)") {
  Tape<double> tape(false);
  auto y = group_norm(tape, Tensor<double>({1, 1, 3}, {1, 2, 3}), 1, Tensor<double>(), Tensor<double>());
  CHECK(y.at(0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(y.at(1) == doctest::Approx(0.0));
  CHECK(y.at(2) == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("instance norm of (2, 4, 6) equals the group norm example") {
  Tape<double> tape(false);
  auto y = instance_norm(tape, Tensor<double>({1, 1, 3}, {2, 4, 6}));
  CHECK(y.at(0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(y.at(2) == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("conv1d of (1, 2, 3) with kernel (1, 1) is (3, 5)") {
  Tape<float> tape(false);
  auto y = conv1d(tape, Tensor<float>({1, 1, 3}, {1, 2, 3}), Tensor<float>({1, 1, 2}, {1, 1}), 1, 0);
  REQUIRE(y.numel() == 2);
  CHECK(y.at(0) == 3.0f);
  CHECK(y.at(1) == 5.0f);
  CHECK(conv_out_len(3, 2, 1, 0) == 2);
  CHECK(conv_out_len(240, 5, 2, 2) == 120);
}

TEST_CASE("log_softmax rows exponentiate to probabilities") {
  Tape<double> tape(false);
  auto y = log_softmax(tape, random_tensor<double>({4, 6}, 60, -5, 5, false));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += std::exp(y.at(r * 6 + c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("op contract violations raise typed errors") {
  Tape<float> tape;
  auto a = random_tensor<float>({2, 3}, 1), b = random_tensor<float>({3, 2}, 2);
  CHECK(testutil::error_kind([&] { add(tape, a, b); }) == ErrorKind::Dimension);
  CHECK(testutil::error_kind([&] { matmul(tape, a, a); }) == ErrorKind::Dimension);
  CHECK(testutil::error_kind([&] { exp(tape, Tensor<float>({1}, {200.0f})); }) == ErrorKind::Numeric);
  CHECK(testutil::error_kind([&] { l2_normalize(tape, Tensor<float>({1, 2}, {0.0f, 0.0f})); }) == ErrorKind::Degenerate);
  CHECK(testutil::error_kind([&] { tape.backward(a); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([&] { Tensor<float>({2, 2}, {1.0f}); }) == ErrorKind::Dimension);
}

TEST_CASE("a tape runs backward once") {
  auto x = random_tensor<float>({3}, 3);
  Tape<float> tape;
  auto loss = sum(tape, x);
  tape.backward(loss);
  for (float g : x.grad()) CHECK(g == 1.0f);
  CHECK(testutil::error_kind([&] { tape.backward(loss); }) == ErrorKind::Usage);
}

TEST_CASE("a non-recording tape leaves gradients untouched") {
  auto x = random_tensor<float>({3}, 4);
  Tape<float> tape(false);
  auto y = exp(tape, x);
  CHECK(y.numel() == 3);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("grad_check skips coordinates whose stencil crosses a ReLU kink") {
  Tensor<double> x({3}, {0.5, 1e-4, -0.7}, true);
  std::vector<Tensor<double>> in{x};
  const auto r = grad_check<double>([&](Tape<double>& t) { return sum(t, relu(t, x)); }, in, 1e-3);
  CHECK(r.kinks == 1);
  CHECK(r.coordinates == 2);
  CHECK(r.max_error < 1e-9);
  Tape<double> a(false), b(false);
  relu(a, Tensor<double>({2}, {1.0, -1.0}));
  relu(b, Tensor<double>({2}, {1.0, 1.0}));
  CHECK(a.branch_signature() != b.branch_signature());
}
