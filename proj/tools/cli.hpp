#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sentinel/error.hpp"

namespace sentinel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

int exit_code_for(ErrorCode code);

// Runs one subcommand. args excludes the program name. Reports go to out,
// diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sentinel::cli
