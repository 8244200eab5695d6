#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eeg2rep {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitDiverged = 3,
  kExitIo = 4,
};

/// Runs one command line (args[0] is the program name). Diagnostics go to
/// `err`, progress to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eeg2rep
