#pragma once

#include <stdexcept>
#include <string>

namespace mbsde {

/// Base error. Every error carries the name of the module that raised it so
/// the orchestrator can report where a pipeline failed.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

    [[nodiscard]] const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

/// Caller broke a documented precondition (bad derivative order, bad constants).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Argument lies outside the set on which a formula is certified.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malliavin tableau index ordering violated (θ > t, or t > s).
class OrderingError : public Error {
public:
    using Error::Error;
};

/// Numerical solver failure (rank deficiency, too many excluded paths).
class SolverError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line = 0)
        : Error("cli", line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    [[nodiscard]] int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace mbsde
