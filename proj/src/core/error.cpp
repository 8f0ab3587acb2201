// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/error.hpp"

namespace locoalign {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Degenerate: return "degenerate input";
    case ErrorKind::Usage: return "usage error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Alignment: return "alignment error";
    case ErrorKind::Corruption: return "corruption error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Checkpoint: return "checkpoint error";
    case ErrorKind::Numeric: return "numerical failure";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace locoalign
