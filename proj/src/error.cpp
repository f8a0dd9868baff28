#include "apef/error.hpp"

namespace apef {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidSeries: return "InvalidSeries";
    case ErrorCode::kNoRiseFallPattern: return "NoRiseFallPattern";
    case ErrorCode::kDegenerateRanking: return "DegenerateRanking";
    case ErrorCode::kDegenerateAgreement: return "DegenerateAgreement";
    case ErrorCode::kDegenerateObservation: return "DegenerateObservation";
    case ErrorCode::kInvalidWeights: return "InvalidWeights";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kScriptExhausted: return "ScriptExhausted";
    case ErrorCode::kTagMismatch: return "TagMismatch";
    case ErrorCode::kParseFailure: return "ParseFailure";
    case ErrorCode::kSchemaViolation: return "SchemaViolation";
    case ErrorCode::kFormulaSyntaxError: return "FormulaSyntaxError";
    case ErrorCode::kPointSumError: return "PointSumError";
    case ErrorCode::kEvaluationError: return "EvaluationError";
    case ErrorCode::kUnrepairable: return "Unrepairable";
    case ErrorCode::kInsufficientPairs: return "InsufficientPairs";
    case ErrorCode::kUnresolvedTie: return "UnresolvedTie";
    case ErrorCode::kUnknownSession: return "UnknownSession";
    case ErrorCode::kUnknownPair: return "UnknownPair";
    case ErrorCode::kUnknownDataset: return "UnknownDataset";
    case ErrorCode::kAlreadyVoted: return "AlreadyVoted";
    case ErrorCode::kAdapterFailure: return "AdapterFailure";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace apef
