#include "steerlab/error.hpp"

namespace steerlab {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::io: return "io";
        case ErrorCode::malformed_header: return "malformed_header";
        case ErrorCode::shape_mismatch: return "shape_mismatch";
        case ErrorCode::missing_tensor: return "missing_tensor";
        case ErrorCode::truncated_blob: return "truncated_blob";
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::context_overflow: return "context_overflow";
        case ErrorCode::empty_vocabulary: return "empty_vocabulary";
        case ErrorCode::empty_prompt: return "empty_prompt";
        case ErrorCode::empty_prompt_set: return "empty_prompt_set";
        case ErrorCode::invalid_layer: return "invalid_layer";
        case ErrorCode::metadata: return "metadata";
        case ErrorCode::parse: return "parse";
        case ErrorCode::duplicate_id: return "duplicate_id";
        case ErrorCode::invalid_rules: return "invalid_rules";
        case ErrorCode::missing_condition: return "missing_condition";
        case ErrorCode::split_violation: return "split_violation";
        case ErrorCode::schema_mismatch: return "schema_mismatch";
        case ErrorCode::integrity: return "integrity";
        case ErrorCode::remote_unreachable: return "remote_unreachable";
        case ErrorCode::remote_protocol: return "remote_protocol";
        case ErrorCode::remote_timeout: return "remote_timeout";
    }
    return "unknown";
}

} // namespace steerlab
