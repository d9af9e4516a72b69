#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedmeta {

enum class ErrorKind {
    InvalidArgument,
    ShapeMismatch,
    LayoutMismatch,
    NonFinite,
    InsufficientData,
    CorruptData,
    Io,
    QuorumNotMet,
    Config,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers and tests
/// can branch on the category without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace fedmeta
