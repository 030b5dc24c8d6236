#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfda {

/// Shape or parameter violations detected at an API boundary.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A time integrator produced a non-finite state.
class NumericalBlowup : public std::runtime_error {
 public:
  NumericalBlowup(const std::string& what, std::size_t step, std::ptrdiff_t member = -1)
      : std::runtime_error(what), step_(step), member_(member) {}

  std::size_t step() const noexcept { return step_; }
  /// Ensemble column that went non-finite, or -1 when not applicable.
  std::ptrdiff_t member() const noexcept { return member_; }

 private:
  std::size_t step_;
  std::ptrdiff_t member_;
};

/// Cholesky factorization of an innovation or noise covariance failed.
class LinearSolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during autoencoder training.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace mfda
