// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal retrieval. Each query has exactly one target: the other half of
// its own triplet. Gallery items are ranked by cosine similarity, ties broken
// by ascending sample index.

#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "core/embed.hpp"

namespace locoalign::tasks {

enum class Direction {
  LocoToJoint,  // s -> o&a
  JointToLoco,  // o&a -> s
};

const char* direction_name(Direction d) noexcept;  // "s2m" / "m2s"
Direction parse_direction(const std::string& s);

struct RetrievalReport {
  Direction direction = Direction::LocoToJoint;
  std::size_t gallery = 0;  // items per gallery
  std::vector<std::size_t> ks;
  std::vector<double> accuracy;  // one per k
  std::vector<std::size_t> ranks;  // 1-based rank of each query's target
  std::vector<std::string> warnings;

  double chance(std::size_t k) const { return gallery ? std::min(1.0, static_cast<double>(k) / static_cast<double>(gallery)) : 0.0; }
};

/// 1-based rank of target i among gallery rows for query i. Rows need not be
/// normalized; only cosine order matters.
std::vector<std::size_t> retrieval_ranks(const std::vector<float>& queries, const std::vector<float>& gallery, std::size_t n,
                                         std::size_t dim);

/// `gallery_size` 0 means the whole split; otherwise consecutive chunks of
/// that many samples form separate galleries (the last chunk may be smaller).
RetrievalReport eval_retrieval(const Embeddings& e, Direction dir, std::vector<std::size_t> ks = {1, 10, 50},
                               std::size_t gallery_size = 0);

/// retrieval_<dir>.jsonl (one record per metric), retrieval_<dir>_summary.csv
/// and retrieval_<dir>_ranks.csv.
void write_retrieval_report(const std::filesystem::path& dir, const RetrievalReport& r);

}  // namespace locoalign::tasks
