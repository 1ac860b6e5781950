#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forge {

enum class ErrorCode {
    // model gateway
    UnknownBackend,
    DuplicateBackend,
    TranscriptExhausted,
    PredicateMismatch,
    ConcurrentConsumption,
    InvalidTranscript,
    // agent topology
    DuplicateAgentName,
    UnresolvableTool,
    InvalidModel,
    InvalidSpec,
    AgentNotFound,
    SubAgentError,
    MemberFailed,
    BoardClosed,
    NotBoardMember,
    UnknownBoard,
    StepLimitExceeded,
    // tool registry
    MalformedRegistry,
    UnknownCategory,
    UnknownTool,
    InvalidManifest,
    DuplicateTool,
    OutOfScope,
    ArgValidation,
    UnknownEnvironment,
    // sandbox
    DriverUnavailable,
    SetupFailed,
    SandboxDead,
    UnknownHandle,
    NotFinished,
    Busy,
    UnknownSnapshot,
    // short-term memory
    InvalidParent,
    RunClosed,
    NothingToSummarize,
    UnknownRun,
    NoRawAttachment,
    MalformedPattern,
    // long-term memory
    EmptyLabel,
    ProviderFailure,
    UnknownNode,
    UnknownNodeType,
    DuplicateEdge,
    InvalidQuery,
    // memory agent
    RoutingFailure,
    // config / cli
    ParseError,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every domain failure in the kernel is reported as a forge::Error.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace forge
