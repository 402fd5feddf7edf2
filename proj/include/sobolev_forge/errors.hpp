#pragma once

#include <stdexcept>
#include <string>

namespace sobolev_forge {

/// Operand shapes that do not compose (convolution, MLP, block wiring).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition of a builder or study was violated.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A study configuration failed schema validation.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed, corrupt or wrong-version serialized artifact.
class SerializationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Compiled network disagrees with its functional oracle.
class CompileCheckError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A chart inversion or covering routine failed to converge.
class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(std::size_t r, std::size_t c)
{
    return std::to_string(r) + "x" + std::to_string(c);
}

} // namespace sobolev_forge
