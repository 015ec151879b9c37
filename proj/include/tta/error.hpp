#pragma once

#include <stdexcept>
#include <string>

namespace tta {

// Shapes or parameter layouts that do not line up.
class LayoutError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced mid-computation, singular systems, failed decompositions.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration. The message carries the offending field path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing, truncated or corrupted files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tta
