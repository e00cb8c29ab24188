#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace detlab {

/// Entry point of the `detlab` binary. `args` excludes the program name.
/// Returns the process exit code: 0 on success, 2 for parse, config and input
/// errors, 3 for invariant violations and internal failures. Errors are
/// reported on `err` as a single line starting with "detlab: error[".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace detlab
