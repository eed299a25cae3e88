#pragma once

#include <stdexcept>
#include <string>

namespace soldfl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or ranks that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced, or an iterative method failed to converge.
class NumericFailure : public Error {
public:
    using Error::Error;
};

/// Operation called in the wrong life-cycle state.
class StateError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value. `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Radio constraints cannot be met.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

}  // namespace soldfl
