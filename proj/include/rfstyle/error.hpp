#pragma once

#include <stdexcept>
#include <string>

namespace rfstyle {

enum class ErrorCode {
    OutOfBounds,
    Dimension,
    Contract,
    Stale,
    MissingFeature,
    NonDifferentiable,
    EmptyCandidates,
    DegenerateVector,
    Configuration,
    Divergence,
    Io,
    Format,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library. The code decides the CLI exit status:
/// Divergence maps to 3, everything else to 2.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace rfstyle
