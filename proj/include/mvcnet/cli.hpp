#pragma once

// Command-line front end. Subcommands: gen, train, eval, verify, grad-check.
// Exit codes: 0 success, 1 validation or usage error, 2 property failure,
// 3 numerical abort.

#include <ostream>
#include <string_view>

namespace mvcnet {

inline constexpr std::string_view kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitPropertyFailure = 2;
inline constexpr int kExitNumerical = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace mvcnet
