#pragma once

#include <stdexcept>
#include <string>

namespace scinet {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Raised by the training loop, e.g. when a loss component turns non-finite.
class TrainingError : public Error {
 public:
  TrainingError(std::string component, const std::string& message);

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

}  // namespace scinet
