#pragma once

#include <stdexcept>
#include <string>

namespace rnvkit {

/// Base of every error raised by the library. The CLI maps subclasses to
/// exit codes (see tools/rnvkit.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated file content.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class BoundsError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A metric that has no value for the given input (e.g. AUC with one class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// An internal consistency check failed; indicates a bug, not bad input.
class InvariantError : public Error {
public:
    using Error::Error;
};

namespace detail {

template <class E = ShapeError>
inline void require(bool cond, const std::string& what)
{
    if (!cond) throw E(what);
}

} // namespace detail
} // namespace rnvkit
