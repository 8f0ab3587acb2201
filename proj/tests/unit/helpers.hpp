// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "../common/gradient_cases.hpp"

namespace testutil {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("locoalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename F>
locoalign::ErrorKind error_kind(F&& f) {
  try {
    f();
  } catch (const locoalign::Error& e) {
    return e.kind();
  }
  FAIL("expected a locoalign::Error");
  return locoalign::ErrorKind::Usage;
}

}  // namespace testutil
