#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scaat {

/// Runs one `scaat` command line (args[0] is the program name). Returns 0
/// on success, 2 on usage or configuration errors, 1 on any other failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scaat
