#pragma once

#include <json.hpp>

#include "maldet/network.hpp"

namespace maldet {

nlohmann::ordered_json model_config_to_json(const net::ModelConfig& config);

/// Overlays the keys of `j` onto `base`. Unknown keys and wrongly typed
/// values throw InvalidConfig naming the key.
net::ModelConfig model_config_from_json(const nlohmann::json& j, net::ModelConfig base = {});

}  // namespace maldet
