#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coursepilot {

enum class ErrorCode {
    EmptyCorpus,
    PreconditionViolation,
    RetriableProviderError,
    ProviderContractError,
    DegenerateVector,
    DimsMismatch,
    EmptyKB,
    ContractViolation,
    IncompatibleKB,
    ChecksumError,
    QuestionTooLong,
    EmptyAnswer,
    NoStatements,
    NoSentences,
    NoClaims,
    JudgeParseError,
    EmptyTestset,
    NotFound,
    Conflict,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the engine carries one of the codes above so the
/// service and CLI can map it to a status without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace coursepilot
