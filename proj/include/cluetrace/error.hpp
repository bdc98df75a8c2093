#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cluetrace {

enum class ErrorCode {
    kRejectedInput,       // out-of-range index, bad config, infeasible spec
    kEmptyEvaluation,     // no instance contributed a term
    kValidationFailed,    // trace does not satisfy its invariants
    kIo,
    kMalformedHeader,
    kMalformedPayload,
    kUnsupportedVersion,
    kUnsupportedLayout,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

[[noreturn]] inline void reject(const std::string& what) {
    throw Error(ErrorCode::kRejectedInput, what);
}

}  // namespace cluetrace
