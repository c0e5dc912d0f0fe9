#pragma once

#include <stdexcept>
#include <string>

namespace bragg {

// Invalid input or configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical procedure could not produce a usable result (exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Fringe wavelength too long compared to the cloud for a phase to be extracted.
class FringeResolvabilityError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace bragg
