// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moesim {

// Malformed input text (config files, CSV arguments).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Well-formed input with out-of-contract values. Messages are stable strings;
// tests match them verbatim.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor shapes.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Row or id out of range.
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

// Collective bookkeeping disagrees with buffer contents.
struct CountMismatch : std::runtime_error {
    explicit CountMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

// A dispatch plan does not match the buffers it is applied to.
struct PlanMismatch : std::runtime_error {
    explicit PlanMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace moesim
