#pragma once

#include <iosfwd>

namespace pmia {

/// Entry point of the `pmia` tool. Subcommands: gen-data, train, unlearn,
/// attack, audit, radar. Returns the process exit code; failures print a
/// JSON error object to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pmia
