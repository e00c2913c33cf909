#pragma once

#include <stdexcept>
#include <string>

namespace lds {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

/// Shape or precondition violation in a numeric routine.
class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape_error"; }
};

class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain_error"; }
};

/// A loss or gradient became non-finite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "divergence"; }
};

/// Malformed or inconsistent input files.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format_error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

}  // namespace lds
