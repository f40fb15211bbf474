#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlb/targets.hpp"

namespace dlb {

/// Exit codes of run_command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `dlb` tool. `args[0]` is the program name. Results go to the paths
/// named by flags, or to `out` when none is given; diagnostics go to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Dataset files hold the target, size, seed and stream; samples are regenerated on load.
/// Materialized files also carry the arrays, which load_dataset_file checks against the
/// regenerated data.
nlohmann::json dataset_to_json(const Dataset& data, bool materialize);
Dataset dataset_from_json(const nlohmann::json& j, const std::string& source = "<json>");
Dataset load_dataset_file(const std::string& path);

}  // namespace dlb
