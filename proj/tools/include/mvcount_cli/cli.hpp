#pragma once

#include <iosfwd>

namespace mvcount::cli {

// Runs the mvcount command line. Returns the process exit code; diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mvcount::cli
