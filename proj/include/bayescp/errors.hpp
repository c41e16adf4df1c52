#pragma once

#include <stdexcept>
#include <string>

namespace bayescp {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

// Raised by load_bundle and friends. `kind` distinguishes the failure class so
// callers (and tests) do not have to parse messages.
class BundleError : public Error {
 public:
  enum class Kind { kMissingFile, kMalformed, kIndexOutOfRange, kLabelOutOfRange, kIo };

  BundleError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Non-finite loss during training. Carries the epoch at which it happened.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class ModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace bayescp
