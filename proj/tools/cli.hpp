#pragma once

#include <string>
#include <vector>

namespace ddfx::cli {

/// Runs one subcommand. args excludes the program name.
/// Returns 0 on success, 1 on runtime failure, 2 on config or argument errors.
int run(const std::vector<std::string>& args);

}  // namespace ddfx::cli
