#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cpvit::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 1;
inline constexpr int exit_io = 2;

/// `args` excludes the program name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies CPVIT_LOG (trace, debug, info, warn, error, off) to spdlog.
void configure_logging();

}  // namespace cpvit::cli
