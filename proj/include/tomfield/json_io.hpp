#pragma once

#include <json.hpp>

#include "tomfield/envs.hpp"
#include "tomfield/fsq.hpp"

namespace tomfield {

nlohmann::json to_json(const envs::EnvConfig& cfg);
envs::EnvConfig env_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const fsq::QuantizerConfig& cfg);
fsq::QuantizerConfig quantizer_config_from_json(const nlohmann::json& j);

}  // namespace tomfield
