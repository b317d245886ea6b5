#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cg3d {

// All library failures derive from Error so callers (CLI, service) can map
// them to exit codes / HTTP statuses by type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file or wire payload. `offset` is the byte offset where parsing
// stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid shapes, sizes, or option combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar arguments (e.g. non-positive temperature).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated by its input.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace cg3d
