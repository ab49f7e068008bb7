#pragma once

#include <stdexcept>
#include <string>

namespace fgs {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised by local training; carries the step at which the loss went bad.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step, double loss)
      : Error(what), step_(step), loss_(loss) {}

  std::size_t step() const noexcept { return step_; }
  double loss() const noexcept { return loss_; }

 private:
  std::size_t step_;
  double loss_;
};

}  // namespace fgs
