#pragma once

#include <iosfwd>

namespace ucl {

/// Entry point of the `ucl` tool. Subcommands: train, eval, init,
/// analyze-sigma, export-plots, gen-tasks. Returns 0 on success, 1 on a
/// runtime error (one line "ucl: error[<kind>]: <message>" on err) and 2 on
/// a usage error (usage text on err).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

} // namespace ucl
