#pragma once

#include <stdexcept>
#include <string>

namespace probact {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible extents, rank, or element counts.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf produced from finite inputs, division by zero, etc.
struct NumericError : Error {
  using Error::Error;
};

// API misuse: consuming a tape twice, backward on a non-recording tape,
// mismatched noise record, ...
struct UsageError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

// Malformed on-disk data (dataset files, CSV).
struct FormatError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace probact
