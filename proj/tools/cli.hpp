#ifndef MMESR_TOOLS_CLI_HPP
#define MMESR_TOOLS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace mmesr::cli
{

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNotConverged = 3;

/// Runs one invocation; args excludes the program name. Machine output goes
/// to `out` (or --output), human-readable tables and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mmesr::cli

#endif
