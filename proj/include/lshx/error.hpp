#pragma once

#include <stdexcept>
#include <string>

namespace lshx {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A function was called outside its mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent index / benchmark parameters.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// On-disk bytes do not match the expected layout.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (CSV / fvecs / ivecs / config).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Query radius grew past the range where the level-R hash keeps its
/// sensitivity guarantee.
class RadiusError : public Error {
 public:
  using Error::Error;
};

/// Fewer results than requested.
class PartialResultError : public Error {
 public:
  PartialResultError(const std::string& what, std::size_t shortfall)
      : Error(what), shortfall_(shortfall) {}
  std::size_t shortfall() const noexcept { return shortfall_; }

 private:
  std::size_t shortfall_;
};

}  // namespace lshx
