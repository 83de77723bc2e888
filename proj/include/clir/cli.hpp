#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clir {

/// Runs one `clir` invocation. `args` excludes the program name.
/// Returns 0 on success, 1 for usage errors, 2 for data errors and 3 for numeric failures;
/// failures print a single "clir: error: ..." line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clir
