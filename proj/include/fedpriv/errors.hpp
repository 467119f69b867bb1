#pragma once

#include <stdexcept>
#include <string>

namespace fedpriv {

// Tensor or vector dimensions disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument is outside its documented domain.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Value cannot be represented (fixed-point bound exceeded, non-finite input).
class RangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

// Malformed on-disk or on-wire bytes.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration rejected by schema validation. `key` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace fedpriv
