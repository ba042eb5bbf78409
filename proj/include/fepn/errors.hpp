#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fepn {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dimension or grid-size mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input for which the requested quantity is undefined (e.g. both densities zero).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimization produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, std::string term, const std::string& phase)
      : std::runtime_error("non-finite loss in " + phase + " phase at step " +
                           std::to_string(step) + " (term: " + term + ")"),
        step_(step),
        term_(std::move(term)) {}

  std::size_t step() const noexcept { return step_; }
  const std::string& term() const noexcept { return term_; }

 private:
  std::size_t step_;
  std::string term_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace fepn
