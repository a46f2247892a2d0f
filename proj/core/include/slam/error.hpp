// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace slam {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid dimensions, unknown policy names, malformed run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operand shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad or missing data: unknown tokens, out-of-range ids, corrupt files.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered in a loss or parameter update.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A quantity whose definition requires a non-empty set (mean over an empty
// mask, PCR with empty M, overlap with an empty English set, ...).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

// Layer selection produced nothing usable.
class SelectionError : public Error {
 public:
  using Error::Error;
};

}  // namespace slam
