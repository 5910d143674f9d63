#pragma once

#include <string>
#include <vector>

namespace marl::cli {

// Entry point behind main(): dispatches train / evaluate / aggregate.
// Returns 0 on success, 2 on usage or config errors, 3 on runtime errors.
int run_cli(int argc, const char* const* argv);

// Same thing for tests: `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace marl::cli
