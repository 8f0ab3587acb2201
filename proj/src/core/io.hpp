// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian blob and text file helpers.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace locoalign::io {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Raw little-endian IEEE-754 binary32 values.
void write_f32(const fs::path& path, std::span<const float> values);
std::vector<float> read_f32(const fs::path& path);
void append_f32(std::vector<char>& out, std::span<const float> values);

/// Raw little-endian IEEE-754 binary64 values.
void write_f64(const fs::path& path, std::span<const double> values);
std::vector<double> read_f64(const fs::path& path);

std::uintmax_t file_size(const fs::path& path);
void ensure_dir(const fs::path& dir);

}  // namespace locoalign::io
