#pragma once

#include <stdexcept>
#include <string>

namespace hslf {

/// Broad failure class; the CLI maps it onto its exit codes.
enum class ErrorKind { usage, data, internal };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error data_error(const std::string& message) { return Error(ErrorKind::data, message); }
inline Error usage_error(const std::string& message) { return Error(ErrorKind::usage, message); }
inline Error internal_error(const std::string& message) { return Error(ErrorKind::internal, message); }

} // namespace hslf
