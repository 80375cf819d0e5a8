#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bruno {

/// Misuse of an API: values from different tapes, bad shapes, empty inputs.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Arithmetic outside an operation's domain (division by zero, log of a non-positive).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A forward computation produced NaN/Inf. `dt` is the step size in seconds
/// when the failure came from a neuron integrator, 0 otherwise.
class NumericInstability : public std::runtime_error {
public:
    NumericInstability(const std::string& what, double dt = 0.0)
        : std::runtime_error(what), dt_(dt) {}
    double dt() const noexcept { return dt_; }

private:
    double dt_;
};

/// A non-finite adjoint appeared during the reverse sweep.
class GradientExplosion : public std::runtime_error {
public:
    explicit GradientExplosion(std::uint32_t node)
        : std::runtime_error("non-finite adjoint at tape node " + std::to_string(node)),
          node_(node) {}
    /// Non-finite values found outside the reverse sweep (e.g. after an update).
    explicit GradientExplosion(const std::string& what)
        : std::runtime_error(what), node_(UINT32_MAX) {}
    std::uint32_t node() const noexcept { return node_; }

private:
    std::uint32_t node_;
};

/// The tape grew beyond its configured byte budget.
class TapeBudgetExceeded : public std::runtime_error {
public:
    explicit TapeBudgetExceeded(std::size_t bytes)
        : std::runtime_error("tape memory budget exceeded at " + std::to_string(bytes) + " bytes"),
          bytes_(bytes) {}
    std::size_t bytes() const noexcept { return bytes_; }

private:
    std::size_t bytes_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. `line` is 1-based; 0 when not line-specific.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace bruno
