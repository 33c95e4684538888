#pragma once

#include <string>
#include <vector>

namespace cataract::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point shared by the executable and the tests. Returns the process
/// exit status: 0 success, 1 runtime failure, 2 bad configuration or usage.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

} // namespace cataract::cli
