#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowkv {

enum class ErrorKind {
    OrderViolation,
    ShapeMismatch,
    EmptySelection,
    RangeNotContiguous,
    IndexOutOfRange,
    BudgetTooSmall,
    BudgetExhausted,
    NonPSDCovariance,
    ConfigError,
    SeqOverflow,
    EmptyInput,
    InvariantViolation,
    IoError,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the engine carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace flowkv
