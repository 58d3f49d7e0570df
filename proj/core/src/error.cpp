#include "lace/error.hpp"

namespace lace {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOk: return "ok";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kInvalidLabel: return "invalid_label";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kEmptyCorpus: return "empty_corpus";
    case ErrorCode::kCheckpointVersion: return "checkpoint_version";
    case ErrorCode::kCheckpointCorrupt: return "checkpoint_corrupt";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kStaleTape: return "stale_tape";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kInfeasible: return "infeasible";
  }
  return "unknown";
}

}  // namespace lace
