#pragma once

#include <stdexcept>
#include <string>

namespace iad {

// Numeric values are part of the C ABI (see iad.h); do not reorder.
enum class ErrorCode : int {
    Argument = 1,
    Range = 2,
    Parse = 3,
    Config = 4,
    Shape = 5,
    State = 6,
    Io = 7,
    Training = 8,
    Metric = 9,
    Ingest = 10,
    Sampling = 11,
    Consistency = 12,
    NotFound = 13,
    Conflict = 14,
    Internal = 15,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace iad
