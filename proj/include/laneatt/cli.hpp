#pragma once

#include <string>
#include <vector>

namespace laneatt {

/// Entry point shared by the `laneatt` binary and the in-process CLI tests.
/// `args` excludes the program name. Returns the process exit code:
/// 0 success, 1 usage/config error, 2 data error, 3 internal error.
int run_cli(const std::vector<std::string>& args);

}  // namespace laneatt
