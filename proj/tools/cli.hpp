#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace raincast::cli {

// Full experiment configuration with every default applied.
nlohmann::json default_config();

// Defaults, overlaid with the JSON file at config_path (when nonempty), then
// with each --set override ("dotted.path=value"). Unknown keys, malformed
// values, and type changes throw ValidationError.
nlohmann::json effective_config(const std::string& config_path,
                                const std::vector<std::string>& overrides);

// Runs one command line (without the program name). Returns the process
// exit code: 0 success, 2 validation/usage error, 3 runtime or divergence
// error.
int run(const std::vector<std::string>& args);

}  // namespace raincast::cli
