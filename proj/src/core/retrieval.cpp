// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/retrieval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "core/error.hpp"
#include "core/io.hpp"

namespace locoalign::tasks {

using nlohmann::json;
namespace fs = std::filesystem;

const char* direction_name(Direction d) noexcept { return d == Direction::LocoToJoint ? "s2m" : "m2s"; }

Direction parse_direction(const std::string& s) {
  if (s == "s2m") return Direction::LocoToJoint;
  if (s == "m2s") return Direction::JointToLoco;
  fail(ErrorKind::Usage, "unknown retrieval direction '" + s + "' (expected s2m or m2s)");
}

std::vector<std::size_t> retrieval_ranks(const std::vector<float>& queries, const std::vector<float>& gallery, std::size_t n,
                                         std::size_t dim) {
  require(queries.size() == n * dim && gallery.size() == n * dim, ErrorKind::Dimension, "retrieval_ranks: shape mismatch");
  std::vector<double> g(n * dim);
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t k = 0; k < dim; ++k) norm += static_cast<double>(gallery[j * dim + k]) * gallery[j * dim + k];
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) fail(ErrorKind::Degenerate, "retrieval_ranks: zero gallery embedding at index " + std::to_string(j));
    for (std::size_t k = 0; k < dim; ++k) g[j * dim + k] = gallery[j * dim + k] / norm;
  }
  std::vector<std::size_t> ranks(n);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* q = queries.data() + i * dim;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += q[k] * g[j * dim + k];
      scores[j] = s;
    }
    const double target = scores[i];
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (scores[j] > target || (scores[j] == target && j < i)) ++ahead;
    ranks[i] = ahead + 1;
  }
  return ranks;
}

RetrievalReport eval_retrieval(const Embeddings& e, Direction dir, std::vector<std::size_t> ks, std::size_t gallery_size) {
  require(e.n >= 1, ErrorKind::Usage, "eval_retrieval: no samples");
  require(!ks.empty(), ErrorKind::Usage, "eval_retrieval: no ranks requested");
  for (auto k : ks) require(k >= 1, ErrorKind::Usage, "eval_retrieval: ranks must be >= 1");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  RetrievalReport r;
  r.direction = dir;
  const std::size_t chunk = gallery_size == 0 ? e.n : std::min(gallery_size, e.n);
  r.gallery = chunk;
  const auto& q = dir == Direction::LocoToJoint ? e.zs : e.zm;
  const auto& g = dir == Direction::LocoToJoint ? e.zm : e.zs;
  for (std::size_t begin = 0; begin < e.n; begin += chunk) {
    const std::size_t end = std::min(e.n, begin + chunk);
    const std::size_t m = end - begin;
    std::vector<float> qc(q.begin() + static_cast<std::ptrdiff_t>(begin * e.dim), q.begin() + static_cast<std::ptrdiff_t>(end * e.dim));
    std::vector<float> gc(g.begin() + static_cast<std::ptrdiff_t>(begin * e.dim), g.begin() + static_cast<std::ptrdiff_t>(end * e.dim));
    const auto part = retrieval_ranks(qc, gc, m, e.dim);
    r.ranks.insert(r.ranks.end(), part.begin(), part.end());
  }
  for (auto& k : ks) {
    if (k > chunk) {
      r.warnings.push_back("rank " + std::to_string(k) + " exceeds gallery size " + std::to_string(chunk) + "; clipped");
      k = chunk;
    }
  }
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  r.ks = ks;
  for (auto k : ks) {
    std::size_t hit = 0;
    for (auto rank : r.ranks) hit += rank <= k;
    r.accuracy.push_back(static_cast<double>(hit) / static_cast<double>(r.ranks.size()));
  }
  return r;
}

void write_retrieval_report(const fs::path& dir, const RetrievalReport& r) {
  io::ensure_dir(dir);
  const std::string stem = std::string("retrieval_") + direction_name(r.direction);
  std::ostringstream jl, csv, ranks;
  csv << "direction,gallery,k,accuracy,chance\n";
  char line[160];
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    json rec{{"metric", "rank" + std::to_string(r.ks[i]) + "_accuracy"},
             {"direction", direction_name(r.direction)},
             {"gallery", r.gallery},
             {"queries", r.ranks.size()},
             {"k", r.ks[i]},
             {"value", r.accuracy[i]},
             {"chance", r.chance(r.ks[i])}};
    jl << rec.dump() << "\n";
    std::snprintf(line, sizeof(line), "%s,%zu,%zu,%.9g,%.9g\n", direction_name(r.direction), r.gallery, r.ks[i], r.accuracy[i],
                  r.chance(r.ks[i]));
    csv << line;
  }
  for (const auto& w : r.warnings) jl << json{{"metric", "warning"}, {"direction", direction_name(r.direction)}, {"message", w}}.dump() << "\n";
  ranks << "query,rank\n";
  for (std::size_t i = 0; i < r.ranks.size(); ++i) ranks << i << "," << r.ranks[i] << "\n";
  io::write_text(dir / (stem + ".jsonl"), jl.str());
  io::write_text(dir / (stem + "_summary.csv"), csv.str());
  io::write_text(dir / (stem + "_ranks.csv"), ranks.str());
}

}  // namespace locoalign::tasks
