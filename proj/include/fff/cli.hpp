#pragma once

#include <iosfwd>

namespace fff {

/// Entry point of the command-line tool. Returns the process exit code:
/// 0 success, 1 configuration or file error, 2 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fff
