#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssdrl {

// Shape or extent mismatch between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the domain of a function (log of a non-positive value...).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value appeared where finite values are required.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : std::runtime_error(what), index_(index) {}

  // Token (or element) index at which the problem was detected, -1 if unknown.
  std::ptrdiff_t index() const { return index_; }

 private:
  std::ptrdiff_t index_;
};

// Invalid configuration: unknown key, bad value, width mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an operation contract (stepping a finished episode...).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Obstacle/goal placement gave up after the rejection budget.
class ArenaTooDenseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt, truncated or incompatible persisted file.
class IntegrityError : public std::runtime_error {
 public:
  IntegrityError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) +
                           ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace ssdrl
