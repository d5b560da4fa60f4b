#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cfp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Arguments violate an operation's preconditions (shape, length, finiteness).
class InvalidInputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid_input"; }
};

/// A user-supplied setting is out of its admissible range.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// Manifest, weight blob or clip does not describe a valid bundle.
/// Carries the offending node id when one is known.
class ModelFormatError : public Error {
 public:
  explicit ModelFormatError(const std::string& what, std::string node_id = {})
      : Error(node_id.empty() ? what : "node '" + node_id + "': " + what),
        node_id_(std::move(node_id)) {}
  const std::string& node_id() const noexcept { return node_id_; }
  const char* kind() const noexcept override { return "model_format"; }

 private:
  std::string node_id_;
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

/// Broken internal invariant; indicates a bug rather than bad input.
class InternalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "internal"; }
};

}  // namespace cfp
