#pragma once

#include <iosfwd>

namespace smae::cli {

// Full command-line entry point, callable in-process for testing.
// Exit codes: 0 success, 1 invalid arguments/config, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace smae::cli
