#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scz {

// Exit codes of the command-line tool.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Runs the `scz` tool with args[0] as the program name. Failures print one
// line "error\t<code>\t<message>" to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scz
