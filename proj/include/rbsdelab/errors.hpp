#pragma once

#include <stdexcept>
#include <string>

namespace rbsdelab {

/// Malformed input: bad tree, inconsistent barriers, unparsable scenario.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine could not produce a result.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TreeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class OrderingViolation : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class BarrierCrossing : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class TerminalViolation : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NonMonotoneGenerator : public SolverError {
 public:
  using SolverError::SolverError;
};

class RootNotBracketed : public SolverError {
 public:
  using SolverError::SolverError;
};

/// mu * dt >= 1: the implicit step no longer has a unique root.
class StepTooLarge : public SolverError {
 public:
  using SolverError::SolverError;
};

class OracleTooLarge : public SolverError {
 public:
  using SolverError::SolverError;
};

class BudgetExceeded : public SolverError {
 public:
  using SolverError::SolverError;
};

class NonTransient : public SolverError {
 public:
  using SolverError::SolverError;
};

class Divergence : public SolverError {
 public:
  using SolverError::SolverError;
};

class NewtonStagnation : public SolverError {
 public:
  using SolverError::SolverError;
};

}  // namespace rbsdelab
