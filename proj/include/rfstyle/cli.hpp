#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rfstyle {

/// Runs one command line (args excludes the program name). Returns the exit
/// code: 0 success, 2 input or contract error, 3 numerical failure.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace rfstyle
