// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace eihi {

enum class ErrorKind {
  Shape,        // dimensional mismatch between tensors or specs
  Numeric,      // NaN/Inf or a degenerate normalization
  Contract,     // precondition of an operation violated
  Config,       // invalid user configuration
  ShiftConfig,  // domain split cannot be realized
  Parse,        // malformed file content
  Io,           // filesystem failure
  Sampler,      // dataset cannot supply positives or negatives
  Determinism,  // repeated evaluation disagreed
  Aborted,      // training stopped on a non-finite loss
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define EIHI_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

EIHI_DEFINE_ERROR(ShapeError, ErrorKind::Shape)
EIHI_DEFINE_ERROR(NumericError, ErrorKind::Numeric)
EIHI_DEFINE_ERROR(ContractError, ErrorKind::Contract)
EIHI_DEFINE_ERROR(ConfigError, ErrorKind::Config)
EIHI_DEFINE_ERROR(ShiftConfigError, ErrorKind::ShiftConfig)
EIHI_DEFINE_ERROR(ParseError, ErrorKind::Parse)
EIHI_DEFINE_ERROR(IoError, ErrorKind::Io)
EIHI_DEFINE_ERROR(SamplerError, ErrorKind::Sampler)
EIHI_DEFINE_ERROR(DeterminismError, ErrorKind::Determinism)
EIHI_DEFINE_ERROR(TrainingAborted, ErrorKind::Aborted)

#undef EIHI_DEFINE_ERROR

}  // namespace eihi
