// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#pragma once

#include <stdexcept>
#include <string>

namespace patchot {

enum class ErrorCode {
  kInvalidArgument = 1,
  kConfig = 2,
  kDivergence = 3,
  kIo = 4,
  kVersion = 5,
  kNonConvergence = 6,
  kDegenerate = 7,
  kCheckFailed = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when a Sinkhorn solve exhausts its iteration budget. Carries the
// last observed marginal violation so callers can report how far off it was.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, double violation, int iterations)
      : Error(ErrorCode::kNonConvergence, what),
        violation_(violation),
        iterations_(iterations) {}

  double violation() const noexcept { return violation_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double violation_;
  int iterations_;
};

// Config problems always name the offending field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(ErrorCode::kConfig, field + ": " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

[[noreturn]] inline void throw_invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, what);
}

[[noreturn]] inline void throw_degenerate(const std::string& what) {
  throw Error(ErrorCode::kDegenerate, what);
}

}  // namespace patchot
