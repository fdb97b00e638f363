#include "flowkv/error.hpp"

namespace flowkv {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::OrderViolation: return "OrderViolation";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::EmptySelection: return "EmptySelection";
        case ErrorKind::RangeNotContiguous: return "RangeNotContiguous";
        case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorKind::BudgetTooSmall: return "BudgetTooSmall";
        case ErrorKind::BudgetExhausted: return "BudgetExhausted";
        case ErrorKind::NonPSDCovariance: return "NonPSDCovariance";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::SeqOverflow: return "SeqOverflow";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::InvariantViolation: return "InvariantViolation";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace flowkv
