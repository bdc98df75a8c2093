#include "cluetrace/error.hpp"

namespace cluetrace {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::kRejectedInput: return "REJECTED_INPUT";
        case ErrorCode::kEmptyEvaluation: return "EMPTY_EVALUATION";
        case ErrorCode::kValidationFailed: return "VALIDATION_FAILED";
        case ErrorCode::kIo: return "IO_ERROR";
        case ErrorCode::kMalformedHeader: return "MALFORMED_HEADER";
        case ErrorCode::kMalformedPayload: return "MALFORMED_PAYLOAD";
        case ErrorCode::kUnsupportedVersion: return "UNSUPPORTED_VERSION";
        case ErrorCode::kUnsupportedLayout: return "UNSUPPORTED_LAYOUT";
    }
    return "UNKNOWN";
}

}  // namespace cluetrace
