// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fixquant {

/// Coarse failure classes. The CLI maps them onto process exit codes.
enum class ErrorCategory { usage, data, numeric };

std::string_view to_string(ErrorCategory category);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

/// Invalid arguments or option combinations.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& message) : Error(ErrorCategory::usage, message) {}
};

/// Malformed inputs: shape mismatches, schema violations, unreadable files.
class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorCategory::data, message) {}
};

/// Non-finite values, accumulator overflow, divergence.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error(ErrorCategory::numeric, message) {}
};

}  // namespace fixquant
