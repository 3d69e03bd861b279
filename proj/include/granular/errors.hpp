#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace granular {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter violates its documented precondition.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Mesh is unusable for the requested operation (open, empty, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed (non-finite positions and the like).
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t index)
      : Error(what + " (particle " + std::to_string(index) + ")"), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Simulation state became invalid; carries the first offending particle.
class SimulationError : public Error {
 public:
  SimulationError(const std::string& what, std::size_t index)
      : Error(what + " (particle " + std::to_string(index) + ")"), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Binary stream is truncated or corrupt.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Scene file could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace granular
