#pragma once

#include <iosfwd>

namespace cfp {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitRuntime = 3 };

/// Runs `cfp <subcommand> ...`. Errors go to `err` as a single JSON line.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cfp
