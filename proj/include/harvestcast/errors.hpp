#pragma once

#include <stdexcept>
#include <string>

namespace harvestcast {

// Base for everything thrown by this library. The CLI maps subclasses to
// exit codes: input/format -> 2, numeric -> 3, missing data -> 4.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape mismatches. Messages name both shapes.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Violated preconditions that are not shape-related (empty batch, bad config,
// degenerate bounding box, ...).
class ContractError : public Error {
public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
  using Error::Error;
};

// Corrupt or unrecognized binary files (bad magic, version, truncation).
class FormatError : public Error {
public:
  using Error::Error;
};

// Malformed text inputs; messages carry line numbers where applicable.
class ParseError : public Error {
public:
  using Error::Error;
};

// A requested variable/month/file is not available from any source.
class MissingDataError : public Error {
public:
  using Error::Error;
};

// Filesystem failures (unreadable path, failed write).
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace harvestcast
