#pragma once

// Checkpoint directory:
//   model.json     config, epoch, threshold, parameter manifest (name, shape,
//                  offset, count, learnable), optimizer step
//   params.bin     float32 little-endian values in manifest order
//   optimizer.bin  float64 first and second moments (optional)

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "tof/network.hpp"
#include "tof/optimizer.hpp"

namespace tof {

struct Checkpoint {
  NetConfig config;
  nn::ParamStore params;
  int epoch = 0;
  double threshold = 0.5;
  std::optional<OptimizerState> optimizer;
  nlohmann::json train_config = nlohmann::json::object();

  Network network() const { return Network(config, params); }
};

void save_checkpoint(const std::filesystem::path& dir, const Network& net, int epoch,
                     double threshold, const OptimizerState* optimizer = nullptr,
                     const nlohmann::json& train_config = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace tof
