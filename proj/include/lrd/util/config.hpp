#pragma once

#include <map>
#include <string>

#include "lrd/nn/model.hpp"

namespace lrd {

/// Flat key=value configuration ('#' comments, blank lines ignored). Files
/// whose first non-space character is '{' are parsed as a flat JSON object
/// instead. Unknown keys are rejected by the typed readers below.
std::map<std::string, std::string> parse_config_file(const std::string& path);
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// Typed extraction with an allowed-key set; throws ValueError on unknown
/// keys, bad values, or out-of-range settings.
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace lrd
