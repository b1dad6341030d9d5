#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace metasched {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `metasched` tool. Usage errors return 2, runtime
/// failures 1 with a diagnostic on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace metasched
