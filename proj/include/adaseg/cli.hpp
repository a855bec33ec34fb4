#pragma once

#include <string>
#include <vector>

// Subcommand dispatch for the adaseg binary. Exit codes: 0 success, 1 usage,
// 2 validation failure, 3 runtime failure.
namespace adaseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace adaseg::cli
