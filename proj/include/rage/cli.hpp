#pragma once

#include <iosfwd>

namespace rage {

inline constexpr int kExitOk = 0;
/// Anything that is neither a usage nor a numeric failure (I/O, say).
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// The `rage` command line: mix, train, enhance, eval, info, self-test.
/// Normal output goes to `out`, warnings and errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rage
