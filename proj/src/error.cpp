#include "coursepilot/error.hpp"

namespace coursepilot {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::PreconditionViolation: return "PreconditionViolation";
        case ErrorCode::RetriableProviderError: return "RetriableProviderError";
        case ErrorCode::ProviderContractError: return "ProviderContractError";
        case ErrorCode::DegenerateVector: return "DegenerateVector";
        case ErrorCode::DimsMismatch: return "DimsMismatch";
        case ErrorCode::EmptyKB: return "EmptyKB";
        case ErrorCode::ContractViolation: return "ContractViolation";
        case ErrorCode::IncompatibleKB: return "IncompatibleKB";
        case ErrorCode::ChecksumError: return "ChecksumError";
        case ErrorCode::QuestionTooLong: return "QuestionTooLong";
        case ErrorCode::EmptyAnswer: return "EmptyAnswer";
        case ErrorCode::NoStatements: return "NoStatements";
        case ErrorCode::NoSentences: return "NoSentences";
        case ErrorCode::NoClaims: return "NoClaims";
        case ErrorCode::JudgeParseError: return "JudgeParseError";
        case ErrorCode::EmptyTestset: return "EmptyTestset";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::Conflict: return "Conflict";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace coursepilot
