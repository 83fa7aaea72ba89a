#ifndef GLIMPSE_ERRORS_HPP
#define GLIMPSE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace glimpse {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A caller broke an interface contract (dimension mismatch, bad argument).
class ContractError : public Error {
public:
  explicit ContractError(const std::string& what) : Error(what) {}
};

/// A matrix that must be symmetric positive definite is not.
class NotPositiveDefiniteError : public Error {
public:
  NotPositiveDefiniteError(const std::string& what, int pivot)
      : Error(what), pivot_index(pivot) {}
  int pivot_index;  // first failing pivot
};

/// A noise variance hit zero or went negative.
class DegenerateNoiseError : public Error {
public:
  explicit DegenerateNoiseError(const std::string& what) : Error(what) {}
};

/// Malformed input file; `offset` is the byte position of the failure.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

/// A bad run configuration (unknown key, missing field, invalid value).
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace glimpse

#endif
