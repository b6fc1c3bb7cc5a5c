#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kerl::cli {

/// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Runs one `kerl` invocation. `args` excludes the program name. Results go
/// to `out`, diagnostics to `err`; `chat` reads its turns from `in`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace kerl::cli
