// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace locoalign::io {

namespace {

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
}

template <typename F, typename U>
std::vector<char> encode(std::span<const F> values) {
  std::vector<char> bytes(values.size() * sizeof(F));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const U le = to_le(std::bit_cast<U>(values[i]));
    std::memcpy(bytes.data() + i * sizeof(F), &le, sizeof(F));
  }
  return bytes;
}

template <typename F, typename U>
std::vector<F> decode(const std::string& bytes, const fs::path& path) {
  if (bytes.size() % sizeof(F) != 0)
    fail(ErrorKind::Corruption, path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                                    std::to_string(sizeof(F)));
  std::vector<F> out(bytes.size() / sizeof(F));
  for (std::size_t i = 0; i < out.size(); ++i) {
    U le;
    std::memcpy(&le, bytes.data() + i * sizeof(F), sizeof(F));
    out[i] = std::bit_cast<F>(to_le(le));
  }
  return out;
}

void write_bytes(const fs::path& path, const char* data, std::size_t size) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  os.write(data, static_cast<std::streamsize>(size));
  if (!os) fail(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text.data(), text.size()); }

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_f32(const fs::path& path, std::span<const float> values) {
  auto bytes = encode<float, std::uint32_t>(values);
  write_bytes(path, bytes.data(), bytes.size());
}

void append_f32(std::vector<char>& out, std::span<const float> values) {
  auto bytes = encode<float, std::uint32_t>(values);
  out.insert(out.end(), bytes.begin(), bytes.end());
}

std::vector<float> read_f32(const fs::path& path) { return decode<float, std::uint32_t>(read_text(path), path); }

void write_f64(const fs::path& path, std::span<const double> values) {
  auto bytes = encode<double, std::uint64_t>(values);
  write_bytes(path, bytes.data(), bytes.size());
}

std::vector<double> read_f64(const fs::path& path) { return decode<double, std::uint64_t>(read_text(path), path); }

std::uintmax_t file_size(const fs::path& path) {
  std::error_code ec;
  auto n = fs::file_size(path, ec);
  if (ec) fail(ErrorKind::Io, "cannot stat " + path.string() + ": " + ec.message());
  return n;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace locoalign::io
