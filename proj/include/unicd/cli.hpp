#pragma once

#include <iosfwd>

namespace unicd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidConfig = 2;
inline constexpr int kExitRuntime = 3;

// Entry point of the `unicd` command line tool. Diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace unicd
