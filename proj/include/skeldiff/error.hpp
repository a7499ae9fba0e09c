#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skeldiff {

/// Coarse error classes. The CLI prints the category name as a
/// machine-parseable prefix before the human message.
enum class ErrorCategory {
    invalid_argument,
    shape,
    numeric,
    io,
    format,
    config,
};

std::string_view category_name(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& message) {
    throw Error(c, message);
}

}  // namespace skeldiff
