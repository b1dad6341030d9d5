#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metasched {

/// Invalid argument values: shape mismatches, out-of-range labels, non-finite inputs.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// API misuse, e.g. feeding a backward pass a cache from a different forward.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid experiment or schedule configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint written by an incompatible format version.
class IncompatibleVersionError : public std::runtime_error {
 public:
  IncompatibleVersionError(int found, int expected)
      : std::runtime_error("checkpoint format_version " + std::to_string(found) +
                           " is incompatible with supported version " +
                           std::to_string(expected)),
        found_(found) {}

  int found() const noexcept { return found_; }

 private:
  int found_;
};

/// Malformed input file. `location()` is a byte offset for checkpoints and a
/// 1-based line number for CSV files.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : std::runtime_error(what), location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

}  // namespace metasched
