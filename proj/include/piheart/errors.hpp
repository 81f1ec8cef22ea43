#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace piheart {

/// Invalid configuration values (sample rate, heart-rate band, noise...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input file or missing file; carries the 1-based line when known.
class InputError : public std::runtime_error {
public:
    InputError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Sample stream broke its ordering or pacing contract.
class StreamError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated a precondition (wrong window length, wrong state...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace piheart
