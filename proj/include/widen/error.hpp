#pragma once

#include <stdexcept>
#include <string>
#include <vector>
#include <sstream>
#include <cstddef>

namespace widen {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not compose.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (architecture, training or expansion settings).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file (IDX, tensor blobs, logs, CSV).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Non-finite values encountered during training.
class NumericError : public Error {
public:
    using Error::Error;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

} // namespace widen
