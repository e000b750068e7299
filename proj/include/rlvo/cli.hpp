#pragma once

#include <iosfwd>

namespace rlvo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;  // usage, config or parse error
inline constexpr int kExitRuntime = 2;

// Entry point of the `rlvo` command line tool:
//   rlvo [--seed N] [--output-dir DIR] [--config FILE] <train|eval|metrics|align> ...
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rlvo
