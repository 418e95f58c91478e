#pragma once

// JSON round-trip for model configurations; used by the CLI to echo resolved
// configs and to reopen checkpoints without re-specifying the architecture.

#include <json.hpp>

#include "shunted/model.hpp"

namespace shunted {

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace shunted
