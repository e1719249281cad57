#pragma once

#include <stdexcept>
#include <string>

namespace citesum {

// Error taxonomy shared across modules. CLI maps ValidationError to exit
// code 2 and DegenerateDataError to exit code 3.

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct KeyError : std::runtime_error {
  explicit KeyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RangeError : std::runtime_error {
  explicit RangeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Graph construction left no usable positive edge, or a zero degree.
struct DegenerateGraphError : std::runtime_error {
  explicit DegenerateGraphError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training data thinned out past the hard-warning threshold.
struct DegenerateDataError : std::runtime_error {
  explicit DegenerateDataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace citesum
