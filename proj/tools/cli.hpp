#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trafo::cli {

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 runtime failure, 2 usage or schema error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace trafo::cli
