#pragma once

namespace last {

// Subcommands: train, eval, landscape, transfer, gradmap.
// Exit codes: 0 ok, 2 config error, 3 io error, 4 numeric abort.
int run_cli(int argc, const char* const* argv);

}  // namespace last
