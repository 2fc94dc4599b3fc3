#pragma once

#include <stdexcept>
#include <string>

namespace d2s {

// Error taxonomy used across the library. All errors carry a human-readable
// message; the CLI maps validation errors to exit code 2 and everything else
// to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch, indivisible dimension, inconsistent tuple.
struct ShapeError : Error {
  using Error::Error;
};

// Argument outside its domain (p >= 1, fan_in = 0, non-binary target, ...).
struct ValueError : Error {
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

// Malformed on-disk artifact (PPM/PGM/checkpoint/manifest).
struct FormatError : Error {
  using Error::Error;
};

// Filesystem failure; message carries the offending path.
struct IoError : Error {
  using Error::Error;
};

// API called out of order (e.g. backward before forward).
struct StateError : Error {
  using Error::Error;
};

// Internally inconsistent data (e.g. a pool index outside its window).
struct IntegrityError : Error {
  using Error::Error;
};

}  // namespace d2s
