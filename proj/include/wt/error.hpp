#pragma once

#include <stdexcept>
#include <string>

namespace wt {

enum class ErrorKind {
    invalid_argument,
    shape,
    state,
    format,
    io,
    config,
    numeric,
    internal,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::shape: return "shape";
        case ErrorKind::state: return "state";
        case ErrorKind::format: return "format";
        case ErrorKind::io: return "io";
        case ErrorKind::config: return "config";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::internal: return "internal";
    }
    return "unknown";
}

/// Every failure raised by the library carries a category so the CLI can
/// report it on a single machine-parsable line.
class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

}  // namespace wt
