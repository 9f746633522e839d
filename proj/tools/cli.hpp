#pragma once

#include <string>
#include <vector>

namespace netfact {

// Parses and runs one subcommand (args exclude the program name). Returns
// the process exit code: 0 success, 2 config error, 3 data error, 4
// numerical failure. Errors are reported as a single line on stderr.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace netfact
