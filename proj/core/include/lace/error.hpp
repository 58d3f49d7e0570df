#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lace {

// Stable error codes. The CLI maps these one-to-one onto process exit codes,
// so never renumber an existing entry.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 2,
  kInvalidLabel = 3,
  kConfig = 4,
  kShapeMismatch = 5,
  kOutOfRange = 6,
  kIo = 7,
  kParse = 8,
  kEmptyCorpus = 9,
  kCheckpointVersion = 10,
  kCheckpointCorrupt = 11,
  kNonFinite = 12,
  kStaleTape = 13,
  kDiverged = 14,
  kInfeasible = 15,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lace
