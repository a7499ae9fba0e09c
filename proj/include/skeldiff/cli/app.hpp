#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace skeldiff::cli {

/// Entry point of the command-line tool. `args` excludes the program name.
/// Failures print "error: <category>: <message>" to `err` and return nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace skeldiff::cli
