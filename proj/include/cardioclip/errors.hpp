// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cardioclip {

// Argument errors use std::invalid_argument directly. The types below cover
// the remaining failure classes so callers can tell them apart.

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SizeMismatchError : FormatError {
  using FormatError::FormatError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct BoundsError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct UndefinedMetricError : std::domain_error {
  using std::domain_error::domain_error;
};

}  // namespace cardioclip
