#pragma once

// Batch front end: `generate`, `run` and `validate`.

#include <iosfwd>
#include <string>
#include <vector>

namespace cenkf {

/// Runs the command line given without the program name. Returns the process
/// exit code; output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cenkf
