#pragma once

// AdaBound: Adam moments with the per-element step size clipped into bounds
// that tighten toward a final SGD rate, intersected with a fixed rate range.

#include <cstdint>
#include <limits>
#include <vector>

#include <json.hpp>

#include "tof/nn/params.hpp"

namespace tof {

struct AdaBoundConfig {
  double lr = 1e-3;
  double final_lr = 2e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double gamma = 1e-3;
  double eps = 1e-8;
  double min_rate = 1e-4;
  double max_rate = 2e-2;
  /// Test hook: drop every bound, leaving plain Adam.
  bool unbounded = false;

  void validate() const;
  friend bool operator==(const AdaBoundConfig&, const AdaBoundConfig&) = default;
};

void to_json(nlohmann::json& j, const AdaBoundConfig& c);
void from_json(const nlohmann::json& j, AdaBoundConfig& c);

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

class AdaBound {
 public:
  AdaBound(AdaBoundConfig config, const nn::ParamStore& params);
  AdaBound(AdaBoundConfig config, const nn::ParamStore& params, OptimizerState state);

  /// Updates learnable tensors in place. Throws NumericError on non-finite
  /// gradients.
  void step(nn::ParamStore& params, const nn::Gradients& grads);

  const OptimizerState& state() const noexcept { return state_; }
  const AdaBoundConfig& config() const noexcept { return config_; }

  /// Dynamic bounds at step t >= 1 (before intersecting with the fixed range).
  double lower_bound(std::uint64_t t) const;
  double upper_bound(std::uint64_t t) const;

  /// Extremes of the per-element rate applied in the last step.
  double last_min_rate() const noexcept { return last_min_rate_; }
  double last_max_rate() const noexcept { return last_max_rate_; }

 private:
  AdaBoundConfig config_;
  OptimizerState state_;
  std::vector<std::uint8_t> learnable_;
  double last_min_rate_ = 0.0;
  double last_max_rate_ = 0.0;
};

}  // namespace tof
