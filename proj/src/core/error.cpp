// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/error.hpp"

namespace eihi {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Config: return "config";
    case ErrorKind::ShiftConfig: return "shift-config";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Sampler: return "sampler";
    case ErrorKind::Determinism: return "determinism";
    case ErrorKind::Aborted: return "aborted";
  }
  return "unknown";
}

}  // namespace eihi
