#pragma once

#include <string>
#include <vector>

namespace pam::cli {

// Entry point shared by the pam binary and the tests. `args` excludes the
// program name. Returns the process exit code: 0 success, 2 usage error,
// 3 artifact/config hash mismatch, 1 anything else.
int run(const std::vector<std::string>& args);

}  // namespace pam::cli
