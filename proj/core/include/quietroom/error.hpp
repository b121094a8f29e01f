#pragma once

#include <stdexcept>
#include <string>

namespace quietroom {

/// Base class for every error raised by the library. The category drives
/// the command-line exit code.
class Error : public std::runtime_error {
public:
    enum class Category { Config, Data, Numerical, Crypto };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

/// Invalid parameters, shapes or preconditions supplied by the caller.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(Category::Config, what) {}
};

/// Malformed or inconsistent input data (files, event lists, series).
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(Category::Data, what) {}
};

/// Non-finite activations, diverging loss and similar numerical faults.
class NumericalFault : public Error {
public:
    explicit NumericalFault(const std::string& what) : Error(Category::Numerical, what) {}
};

/// Raised by gcc_phat_tdoa when the inputs carry no energy.
class NoSignalError : public DataError {
public:
    explicit NoSignalError(const std::string& what) : DataError(what) {}
};

/// Authentication or key failure while opening a sealed record.
class CryptoError : public Error {
public:
    explicit CryptoError(const std::string& what) : Error(Category::Crypto, what) {}
};

/// Process exit code for an error category: config 2, data 3, numerical 4, crypto 5.
int exit_code_for(const Error& error) noexcept;

}  // namespace quietroom
