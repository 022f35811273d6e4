#pragma once

// Regularization schedules as pure functions of the epoch.

#include <cstdint>

#include <json.hpp>

#include "tof/network.hpp"

namespace tof {

struct ScheduleConfig {
  int dropblock_ramp_epochs = 50;
  double rmax_final = 3.0;
  int rmax_start_epoch = 5;
  int rmax_end_epoch = 40;
  double dmax_final = 5.0;
  int dmax_start_epoch = 5;
  int dmax_end_epoch = 25;
  double alpha_rate = 0.01;
  double alpha_cap = 0.5;

  void validate() const;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

struct ScheduleValues {
  double dropblock = 0.0;
  double rmax = 1.0;
  double dmax = 0.0;
  double alpha = 0.0;
};

/// Linear ramp from `from` at `start` to `to` at `end`, constant outside.
double linear_ramp(int epoch, int start, int end, double from, double to);

/// Values for a schedule epoch. Throws ConfigError for a negative epoch.
ScheduleValues schedule_at(int epoch, const ScheduleConfig& s, double dropblock_max);

/// Train-mode forward options for one batch.
ForwardOptions training_options(int epoch, const ScheduleConfig& s, const NetConfig& net,
                                std::uint64_t noise_seed);

}  // namespace tof
