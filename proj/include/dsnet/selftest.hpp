#pragma once

#include <iosfwd>

namespace dsnet {

// Runs every module's invariant suite in-process, printing one timed
// pass/fail line per suite to `os`. Returns the number of failed suites.
int run_selftest(std::ostream& os);

}  // namespace dsnet
