#pragma once

#include <iosfwd>

namespace pyrhead::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv and runs one subcommand; results go to `out` unless --out is
/// given, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pyrhead::cli
