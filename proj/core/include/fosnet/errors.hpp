#pragma once

#include <stdexcept>
#include <string>

namespace fosnet {

// Shape or geometry contract violated by an operation's inputs.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value encountered, or a numerically degenerate configuration.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// File format / filesystem problems.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration values (JSON config, CLI arguments).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fosnet
