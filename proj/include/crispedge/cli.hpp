#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crispedge {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  exit_ok = 0,
  exit_internal = 1,
  exit_usage = 2,
  exit_config = 3,
  exit_data = 4,
  exit_numeric = 5,
};

/// Runs one `crispedge` subcommand; `args` excludes the program name.
/// Errors go to `err` as a single `crispedge: <subcommand>: ...` line.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace crispedge
