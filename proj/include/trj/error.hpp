// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace trj {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV rows, config lines, checkpoint bytes).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Structurally valid input that disagrees with the declared layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid option or parameter combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared inside a differentiable primitive.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& primitive)
      : Error("non-finite value produced by primitive '" + primitive + "'"), primitive_(primitive) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

/// Unknown attribute program id.
class RegistryError : public Error {
 public:
  using Error::Error;
};

class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

class AugmentationError : public Error {
 public:
  using Error::Error;
};

/// Iterative training did not reach its target; carries the best value seen.
class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, double best_error) : Error(what), best_error_(best_error) {}
  double best_error() const noexcept { return best_error_; }

 private:
  double best_error_;
};

}  // namespace trj
