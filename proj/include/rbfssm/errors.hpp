// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rbfssm {

// Base of every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid input data or configuration. CLI maps these to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// A computation failed numerically. CLI maps these to exit code 3.
struct NumericalError : Error {
  using Error::Error;
};

// File I/O and parse failures. CLI maps these to exit code 4.
struct IoError : Error {
  using Error::Error;
};

// Segmentation contains a single label; a signed distance field is undefined.
struct AllOneLabelError : ConfigError {
  using ConfigError::ConfigError;
};

// Query point outside the region where the requested operation is defined.
struct OutOfBoundsError : NumericalError {
  using NumericalError::NumericalError;
};

// No voxel lies within the requested narrow band.
struct EmptyBandError : NumericalError {
  using NumericalError::NumericalError;
};

// Rejection sampling acceptance rate fell below the safety cutoff.
struct SamplingStalledError : NumericalError {
  using NumericalError::NumericalError;
};

// Requested analytic shape does not fit inside the target grid.
struct SpecOutOfGridError : ConfigError {
  using ConfigError::ConfigError;
};

// A normal (or field gradient) vanished where a direction was required.
struct DegenerateNormalError : NumericalError {
  using NumericalError::NumericalError;
};

// Dipole offset must be strictly positive.
struct NonPositiveOffsetError : ConfigError {
  using ConfigError::ConfigError;
};

// Interpolation system could not be solved reliably.
struct SingularSystemError : NumericalError {
  using NumericalError::NumericalError;
};

// Inputs that must agree in shape (point counts, grid sizes) do not.
struct ShapeMismatchError : ConfigError {
  using ConfigError::ConfigError;
};

// Mode index or mode count outside what the model retains.
struct BadModeCountError : ConfigError {
  using ConfigError::ConfigError;
};

// Iterative projection left the valid region or lost its descent direction.
struct DivergedError : NumericalError {
  using NumericalError::NumericalError;
};

// Operation requires a non-empty mesh.
struct EmptyMeshError : ConfigError {
  using ConfigError::ConfigError;
};

// Malformed file content. Carries the 1-based line number when known.
struct ParseError : IoError {
  int line;
  ParseError(const std::string& message, int line_number)
      : IoError(message + " (line " + std::to_string(line_number) + ")"),
        line(line_number) {}
  explicit ParseError(const std::string& message) : IoError(message), line(0) {}
};

}  // namespace rbfssm
