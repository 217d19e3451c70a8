// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy. The CLI maps ConfigError to exit code 2 and IoError to 3.

#pragma once

#include <stdexcept>
#include <string>

namespace gradleak {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a cosine distance hits a zero-norm gradient vector.
struct DegenerateGradientError : std::runtime_error {
    explicit DegenerateGradientError(const std::string& what) : std::runtime_error(what) {}
};

// Raised by label inference when the bias-gradient sign rule is not decisive.
struct AmbiguousLabelError : std::runtime_error {
    explicit AmbiguousLabelError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gradleak
