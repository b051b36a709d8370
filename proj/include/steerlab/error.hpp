#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steerlab {

enum class ErrorCode {
    invalid_argument,
    io,
    malformed_header,
    shape_mismatch,
    missing_tensor,
    truncated_blob,
    dimension_mismatch,
    context_overflow,
    empty_vocabulary,
    empty_prompt,
    empty_prompt_set,
    invalid_layer,
    metadata,
    parse,
    duplicate_id,
    invalid_rules,
    missing_condition,
    split_violation,
    schema_mismatch,
    integrity,
    remote_unreachable,
    remote_protocol,
    remote_timeout,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries a stable code so the CLI can
// emit a machine-parsable error line.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace steerlab
