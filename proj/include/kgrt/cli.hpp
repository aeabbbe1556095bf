#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kgrt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one `kgrt` invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kgrt::cli
