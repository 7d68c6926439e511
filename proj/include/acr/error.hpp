#pragma once

#include <stdexcept>
#include <string>

namespace acr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Batch statistics requested on fewer than two rows.
class BatchTooSmallError : public Error {
public:
    using Error::Error;
};

/// Backward called without a matching forward, or similar misuse of call order.
class StateError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Metric is undefined for the given input (e.g. AUROC with one class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Input file could not be parsed. Message carries the offending line.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Training produced non-finite losses for too long.
class DivergenceError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

}  // namespace detail

}  // namespace acr
