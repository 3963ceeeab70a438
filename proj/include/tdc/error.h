// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef TDC_ERROR_H_
#define TDC_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace tdc {

// Error categories double as machine-readable CLI error tags and exit codes.
enum class ErrorCategory {
  kDimension = 3,
  kConfiguration = 2,
  kNumerical = 4,
  kDegenerateInput = 5,
  kIo = 6,
  kUnsupported = 7,
};

std::string_view category_name(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorCategory::kDimension, what) {}
};

class ConfigurationError : public Error {
 public:
  explicit ConfigurationError(const std::string& what)
      : Error(ErrorCategory::kConfiguration, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorCategory::kNumerical, what) {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error(ErrorCategory::kDegenerateInput, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& what)
      : Error(ErrorCategory::kUnsupported, what) {}
};

}  // namespace tdc

#endif  // TDC_ERROR_H_
