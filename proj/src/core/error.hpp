// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Error hierarchy shared by every core module. The C API maps ErrorKind onto
// its status codes, and the CLI maps those onto process exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace locoalign {

enum class ErrorKind {
  Dimension,   // shape mismatch between operands
  Config,      // invalid configuration value
  Degenerate,  // mathematically undefined input (zero norm, ...)
  Usage,       // API misuse (non-scalar loss, empty dataset, ...)
  Format,      // malformed on-disk data or non-monotone timestamps
  Alignment,   // modality streams do not overlap in time
  Corruption,  // blob size disagrees with manifest
  Version,     // unknown on-disk format version
  Checkpoint,  // missing tensor / shape drift / config mismatch
  Numeric,     // NaN or Inf produced
  Io,          // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace locoalign
