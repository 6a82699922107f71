#pragma once

#include <iosfwd>

namespace npdet {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumerical = 3 };

// Entry point of the `npdet` tool: synth, train, eval, anchors, predict.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace npdet
