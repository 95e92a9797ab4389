#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecgfuse {

enum class ErrorCode {
    // ingest
    MissingLead,
    LengthMismatch,
    MalformedHeader,
    UnreadableFile,
    TooShort,
    EmptySignal,
    // dsp
    InvalidCutoff,
    WindowTooLong,
    ChunkTooLong,
    AlreadyNormalized,
    NotNormalized,
    // encoder
    BackendLoadFailure,
    ShapeMismatch,
    NonFiniteOutput,
    UnsupportedFormat,
    TauMismatch,
    // model
    InvalidTarget,
    EmptySequence,
    // eval
    ClassTooSmall,
    EmptyTrainingSet,
    DegenerateLabels,
    CacheMiss,
    // cli
    ConfigInvalid,
    UnknownSubcommand,
    StaleCache,
};

std::string_view to_string(ErrorCode code);

// Configuration problems exit with 2, everything else with 1.
bool is_config_error(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace ecgfuse
