#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nessim {

/// Non-finite input or a violated precondition on numeric arguments.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised by the integrators when the extended energy leaves the admissible range.
class BlowUp : public std::runtime_error {
 public:
  BlowUp(std::int64_t step, double energy)
      : std::runtime_error("integration blew up at step " + std::to_string(step) +
                           " (G = " + std::to_string(energy) + "); dt too large for the stiffness"),
        step_(step),
        energy_(energy) {}

  std::int64_t step() const noexcept { return step_; }
  double energy() const noexcept { return energy_; }

 private:
  std::int64_t step_;
  double energy_;
};

class NonQuadratic : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NotHurwitz : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration parse/validation failure. Line and column are 1-based; 0 means unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line = 0, int column = 0)
      : std::runtime_error(format(message, line, column)), line_(line), column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& message, int line, int column) {
    if (line <= 0) return message;
    return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message;
  }

  int line_;
  int column_;
};

}  // namespace nessim
