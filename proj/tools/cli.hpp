#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace repdetect::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

// Runs one `repdetect` invocation. `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace repdetect::cli
