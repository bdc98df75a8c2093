#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cluetrace::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitEmpty = 4;
inline constexpr int kExitConfig = 5;
inline constexpr int kExitUsage = 64;

// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cluetrace::cli
