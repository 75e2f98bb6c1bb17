#pragma once

#include <stdexcept>
#include <string>

namespace gbp {

// Base class for every planner-specific failure so callers can catch the
// whole family at once (the CLI maps these to exit code 2 or 3).
class PlanningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Point projects outside the usable band around a lane centerline.
class ProjectionOutOfRange : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// Position cannot be associated with any lane of the map.
class OffMap : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// A lateral action requires a neighbor lane that does not exist.
class NoSuchNeighbor : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// The target path ends within the pure-pursuit lookahead distance.
class PathExhausted : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// Car-following gap is zero or negative, i.e. the vehicles already overlap.
class NonPositiveGap : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

class EmptyActionSet : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// Scenario enumeration exceeded the configured combination cap.
class TooManyCombinations : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// Every candidate sequence collided in every scenario.
class NoFeasiblePolicy : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

class EmptyLog : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

// Log parse failure; carries the 1-based line number of the offending line.
class MalformedLog : public PlanningError {
 public:
  MalformedLog(const std::string& what, int line)
      : PlanningError(what + " at line " + std::to_string(line)), line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

// Map fails a structural invariant (spacing, symmetry, cycles, ...).
class MapValidationError : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

class ConfigError : public PlanningError {
 public:
  using PlanningError::PlanningError;
};

}  // namespace gbp
