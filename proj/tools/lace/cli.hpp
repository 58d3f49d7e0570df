#pragma once

#include <iosfwd>

namespace lace::cli {

/// Exit codes outside the library's error codes.
inline constexpr int kExitUsage = 64;
inline constexpr int kExitInternal = 70;

/// Runs one `lace` invocation. Errors are reported on `err` as a single JSON
/// line and mapped to a stable exit code.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lace::cli
