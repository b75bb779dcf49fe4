#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mfrflow::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Runs one command line (without the program name), e.g.
/// {"gen-data", "--spec", "small:1", "--count", "8", "--out", "d"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mfrflow::cli
