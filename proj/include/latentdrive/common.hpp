#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ld {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: bad parameters, unachievable grids, unknown kinds.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Failure while reading an archive, bank, or config file.
class LoadError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class RuleError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace ld
