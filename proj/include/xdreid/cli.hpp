#pragma once

#include <string>
#include <vector>

namespace xdreid::cli {

/// Runs one CLI command. Exit codes: 0 success, 2 usage error, 1 runtime
/// error. `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace xdreid::cli
