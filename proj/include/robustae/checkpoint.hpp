#pragma once

#include <string>

#include "robustae/nn.hpp"
#include "nlohmann/json.hpp"

namespace robustae::ckpt {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Self-describing binary container: a magic line, a length-prefixed JSON
/// header (config + tensor manifest), then the raw parameter blobs in
/// registration order.
void save_container(const std::string& path, const std::string& magic,
                    const nlohmann::json& config, const nn::ParamMap& params);

/// Reads the header back; caller constructs the model from the config and
/// then calls load_params with the model's own registry.
nlohmann::json read_container_config(const std::string& path, const std::string& magic);
void load_params(const std::string& path, const std::string& magic, const nn::ParamMap& params);

}  // namespace robustae::ckpt
