// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <doctest.h>

#include "core/embed.hpp"
#include "core/retrieval.hpp"
#include "helpers.hpp"

using namespace locoalign;
using namespace locoalign::tasks;

namespace {

std::vector<float> random_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

/// Oracle: sort gallery indices by (cosine desc, index asc) and find the target.
std::vector<std::size_t> sorted_ranks(const std::vector<float>& q, const std::vector<float>& g, std::size_t n, std::size_t dim) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> s;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0, gn = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        dot += static_cast<double>(q[i * dim + k]) * g[j * dim + k];
        gn += static_cast<double>(g[j * dim + k]) * g[j * dim + k];
      }
      s.emplace_back(-dot / std::sqrt(gn), j);
    }
    std::sort(s.begin(), s.end());
    for (std::size_t r = 0; r < n; ++r)
      if (s[r].second == i) out[i] = r + 1;
  }
  return out;
}

Embeddings make_embeddings(std::vector<float> zs, std::vector<float> zm, std::size_t n, std::size_t dim) {
  Embeddings e;
  e.n = n;
  e.dim = dim;
  e.zs = std::move(zs);
  e.zm = std::move(zm);
  return e;
}

}  // namespace

TEST_CASE("perfectly aligned embeddings retrieve at rank 1") {
  const auto z = random_rows(50, 6, 1);
  const auto e = make_embeddings(z, z, 50, 6);
  for (auto dir : {Direction::LocoToJoint, Direction::JointToLoco}) {
    const auto r = eval_retrieval(e, dir, {1, 5});
    CHECK(r.accuracy == std::vector<double>{1.0, 1.0});
    CHECK(r.warnings.empty());
  }
}

TEST_CASE("ranks agree with a sorting oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto q = random_rows(30, 4, seed), g = random_rows(30, 4, seed + 100);
    CHECK(retrieval_ranks(q, g, 30, 4) == sorted_ranks(q, g, 30, 4));
  }
}

TEST_CASE("unrelated embeddings score near chance") {
  const std::size_t n = 400;
  const auto e = make_embeddings(random_rows(n, 8, 2), random_rows(n, 8, 3), n, 8);
  const auto r = eval_retrieval(e, Direction::LocoToJoint, {1, 40});
  CHECK(r.chance(1) == doctest::Approx(1.0 / n));
  CHECK(r.accuracy[0] < 0.02);
  CHECK(std::abs(r.accuracy[1] - 0.1) < 0.05);
  const double mean_rank = std::accumulate(r.ranks.begin(), r.ranks.end(), 0.0) / static_cast<double>(n);
  CHECK(std::abs(mean_rank - (n + 1) / 2.0) < 0.1 * n);
}

TEST_CASE("accuracy is monotone in k") {
  const auto e = make_embeddings(random_rows(60, 3, 4), random_rows(60, 3, 5), 60, 3);
  const auto r = eval_retrieval(e, Direction::JointToLoco, {30, 1, 5, 10, 60});
  REQUIRE(r.ks == std::vector<std::size_t>{1, 5, 10, 30, 60});
  for (std::size_t i = 1; i < r.accuracy.size(); ++i) CHECK(r.accuracy[i] >= r.accuracy[i - 1]);
  CHECK(r.accuracy.back() == 1.0);
}

TEST_CASE("positive rescaling of any row leaves ranks unchanged") {
  auto q = random_rows(25, 5, 6), g = random_rows(25, 5, 7);
  const auto before = retrieval_ranks(q, g, 25, 5);
  Rng rng(8);
  for (std::size_t i = 0; i < 25; ++i) {
    const float sq = std::ldexp(1.0f, static_cast<int>(rng.below(6)) - 3);
    const float sg = std::ldexp(1.0f, static_cast<int>(rng.below(6)) - 3);
    for (std::size_t k = 0; k < 5; ++k) {
      q[i * 5 + k] *= sq;
      g[i * 5 + k] *= sg;
    }
  }
  CHECK(retrieval_ranks(q, g, 25, 5) == before);
}

TEST_CASE("ties resolve by ascending index") {
  // Every gallery row is identical, so the target of query i sits at rank i + 1.
  const std::vector<float> q = random_rows(4, 2, 9);
  const std::vector<float> g(8, 1.0f);
  CHECK(retrieval_ranks(q, g, 4, 2) == std::vector<std::size_t>{1, 2, 3, 4});
}

TEST_CASE("k beyond the gallery is clipped with a warning") {
  const auto e = make_embeddings(random_rows(10, 3, 10), random_rows(10, 3, 11), 10, 3);
  const auto r = eval_retrieval(e, Direction::LocoToJoint, {1, 50});
  CHECK(r.ks == std::vector<std::size_t>{1, 10});
  CHECK(r.accuracy.back() == 1.0);
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("fixed-size galleries chunk the split") {
  const auto z = random_rows(10, 3, 12);
  auto shuffled = random_rows(10, 3, 13);
  const auto e = make_embeddings(z, shuffled, 10, 3);
  const auto r = eval_retrieval(e, Direction::LocoToJoint, {4}, 4);
  CHECK(r.gallery == 4);
  REQUIRE(r.ranks.size() == 10);
  for (std::size_t i = 0; i < 8; ++i) CHECK(r.ranks[i] <= 4);
  for (std::size_t i = 8; i < 10; ++i) CHECK(r.ranks[i] <= 2);
  CHECK(r.accuracy[0] == 1.0);
}

TEST_CASE("invalid retrieval requests") {
  const auto e = make_embeddings(random_rows(4, 2, 1), random_rows(4, 2, 2), 4, 2);
  CHECK(testutil::error_kind([&] { eval_retrieval(e, Direction::LocoToJoint, {0}); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([&] { eval_retrieval(e, Direction::LocoToJoint, {}); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([] { parse_direction("both"); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([&] { retrieval_ranks(e.zs, std::vector<float>(8, 0.0f), 4, 2); }) == ErrorKind::Degenerate);
  CHECK(parse_direction("m2s") == Direction::JointToLoco);
}

TEST_CASE("report files hold one record per metric") {
  const auto z = random_rows(12, 3, 14);
  const auto r = eval_retrieval(make_embeddings(z, z, 12, 3), Direction::JointToLoco, {1, 5, 100});
  const auto dir = testutil::temp_dir("retrieval_report");
  write_retrieval_report(dir, r);
  std::ifstream csv(dir / "retrieval_m2s_summary.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 1 + r.ks.size());
  CHECK(std::filesystem::exists(dir / "retrieval_m2s.jsonl"));
  CHECK(std::filesystem::exists(dir / "retrieval_m2s_ranks.csv"));
}

TEST_CASE("embedding a dataset yields unit projected rows") {
  const auto cfg = model::ModelConfig::tiny(8, 16, 27, 48);
  const auto ck = model::init_params(cfg, 5);
  Rng rng(15);
  std::vector<traj::TripletSample> samples(5);
  for (auto& s : samples) {
    s.window = 48;
    s.loco_channels = 27;
    s.o = {8, 16, std::vector<float>(128)};
    for (auto& v : s.o.pixels) v = static_cast<float>(rng.uniform());
    s.s.resize(48 * 27);
    for (auto& v : s.s) v = static_cast<float>(rng.normal());
    s.c.resize(96);
    for (auto& v : s.c) v = static_cast<float>(rng.uniform());
  }
  const auto ds = data::make_dataset(samples, "test", 0);
  const auto e = embed_dataset(ck, ds, false, 2);
  CHECK(e.n == 5);
  CHECK(e.zs.size() == 5 * e.dim);
  for (std::size_t i = 0; i < e.n; ++i) {
    double a = 0, b = 0;
    for (std::size_t k = 0; k < e.dim; ++k) {
      a += e.zs[i * e.dim + k] * e.zs[i * e.dim + k];
      b += e.zm[i * e.dim + k] * e.zm[i * e.dim + k];
    }
    CHECK(a == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(b == doctest::Approx(1.0).epsilon(1e-5));
  }
  // Batch size must not change the result.
  const auto whole = embed_dataset(ck, ds, false, 64);
  for (std::size_t i = 0; i < e.zs.size(); ++i) CHECK(e.zs[i] == doctest::Approx(whole.zs[i]).epsilon(1e-5));
  const auto masked = embed_dataset(ck, ds, true);
  CHECK(masked.vs == whole.vs);
  CHECK(masked.vc != whole.vc);

  const auto dir = testutil::temp_dir("export");
  export_embeddings(dir, ds, whole, false);
  const auto per_row = whole.vo.size() / 5 + whole.vc.size() / 5 + whole.vs.size() / 5 + whole.vm.size() / 5;
  CHECK(std::filesystem::file_size(dir / "embeddings.f32") == 5 * per_row * sizeof(float));
}
