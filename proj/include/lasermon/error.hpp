#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lasermon {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// On-disk layout is missing or malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class DegenerateTarget : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(std::size_t epoch)
      : Error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  TrainingDiverged(const std::string& context, std::size_t epoch) : Error(context), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class StudyFailed : public Error {
 public:
  using Error::Error;
};

}  // namespace lasermon
