#ifndef MIPL_CLI_HPP
#define MIPL_CLI_HPP

#include <string>
#include <vector>

namespace mipl::cli {

// Entry point behind the binary. Exit codes: 0 success, 1 configuration or
// contract failure (including flag parse errors), 2 numeric abort or a failed
// gradient check.
int run(int argc, const char* const* argv);

// Test convenience: args without the program name.
int run(const std::vector<std::string>& args);

} // namespace mipl::cli

#endif
