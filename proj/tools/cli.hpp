#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Flat key = value configuration. Blank lines and lines starting with '#'
// are skipped. Unknown keys are rejected with the file and line.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source);

// Every recognised configuration key with its default ("" = unset).
const std::vector<std::pair<std::string, std::string>>& config_defaults();

// Runs `tda <args...>` (args excludes the program name). Returns the exit
// code: 0 success, 2 configuration or input error, 3 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tda::cli
