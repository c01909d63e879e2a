#pragma once

#include <stdexcept>
#include <string>

namespace dash {

enum class ErrorKind {
    Validation,  // bad arguments or spec bounds
    Data,        // missing/corrupt files, id collisions, unknown ids
    Compute,     // non-finite loss, shape mismatch at run time
    NotFound,
    Conflict,
};

/// Base exception carrying a kind so adapters (CLI exit codes, HTTP status)
/// can map failures without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::string detail = {})
        : std::runtime_error(message), kind_(kind), detail_(std::move(detail)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

inline Error validation_error(const std::string& msg, std::string detail = {}) {
    return {ErrorKind::Validation, msg, std::move(detail)};
}
inline Error data_error(const std::string& msg, std::string detail = {}) {
    return {ErrorKind::Data, msg, std::move(detail)};
}
inline Error compute_error(const std::string& msg, std::string detail = {}) {
    return {ErrorKind::Compute, msg, std::move(detail)};
}
inline Error not_found_error(const std::string& msg, std::string detail = {}) {
    return {ErrorKind::NotFound, msg, std::move(detail)};
}
inline Error conflict_error(const std::string& msg, std::string detail = {}) {
    return {ErrorKind::Conflict, msg, std::move(detail)};
}

const char* to_string(ErrorKind kind);

}  // namespace dash
