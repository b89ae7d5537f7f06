#pragma once

#include <stdexcept>
#include <string>

namespace ldsep {

// invalid-argument conditions use std::invalid_argument directly.

struct UnsupportedOperation : std::runtime_error {
  explicit UnsupportedOperation(const std::string& m) : std::runtime_error(m) {}
};

struct InvalidState : std::runtime_error {
  explicit InvalidState(const std::string& m) : std::runtime_error(m) {}
};

// A metric whose value is mathematically undefined for the given inputs
// (zero reference, no jointly voiced frames).
struct UndefinedMetric : std::runtime_error {
  explicit UndefinedMetric(const std::string& m) : std::runtime_error(m) {}
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& m, std::size_t offset)
      : std::runtime_error(m + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

}  // namespace ldsep
