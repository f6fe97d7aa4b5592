#pragma once

#include <stdexcept>
#include <string>

namespace spade {

/// Base for every error raised by the engine. `kind()` names the category so
/// callers (and the CLI) can report it without RTTI.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& what)
      : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

#define SPADE_DEFINE_ERROR(Name, Label)                               \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(Label, what) {}    \
  }

SPADE_DEFINE_ERROR(DimensionError, "dimension error");
SPADE_DEFINE_ERROR(ConfigError, "config error");
SPADE_DEFINE_ERROR(PreconditionError, "precondition error");
SPADE_DEFINE_ERROR(UsageError, "usage error");
SPADE_DEFINE_ERROR(NumericError, "numeric error");
SPADE_DEFINE_ERROR(FormatError, "format error");
SPADE_DEFINE_ERROR(IoError, "io error");
SPADE_DEFINE_ERROR(ProvenanceError, "provenance error");

#undef SPADE_DEFINE_ERROR

/// Raised by lens training when the loss stops being finite.
class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(int step, const std::string& what)
      : Error("training diverged", "step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Raised when toy-model training exhausts its budget below the accuracy gate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(double accuracy, const std::string& what)
      : Error("convergence failure", what), accuracy_(accuracy) {}
  double accuracy() const noexcept { return accuracy_; }

 private:
  double accuracy_;
};

}  // namespace spade
