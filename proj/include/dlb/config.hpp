#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "dlb/experiment.hpp"

namespace dlb {

/// Top-level JSON configuration: the sweep (which embeds the target), the single-run seed,
/// and an optional output directory. Flags on the command line take precedence.
struct ExperimentConfig {
    SweepConfig sweep;
    std::uint64_t seed = 1;
    std::optional<std::string> output_dir;
};

/// Strict parse: unknown keys, wrong types and invariant violations raise ParseError naming
/// the dotted field path. `source` is used in diagnostics only.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::string& source = "<json>");

/// Reads and parses a config file. Throws NotFound or ParseError.
ExperimentConfig parse_config(const std::string& path);

/// Full serialization with every default written out; parses back to an equal config.
nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const TargetSpec& spec);
TargetSpec target_from_json(const nlohmann::json& j, const std::string& source = "<json>");

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace dlb
