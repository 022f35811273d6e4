#include "tof/schedules.hpp"

#include <algorithm>

#include "tof/objective.hpp"

namespace tof {

void ScheduleConfig::validate() const {
  if (dropblock_ramp_epochs < 0) throw ConfigError("dropblock_ramp_epochs must be >= 0");
  if (rmax_final < 1.0) throw ConfigError("rmax_final must be >= 1");
  if (dmax_final < 0.0) throw ConfigError("dmax_final must be >= 0");
  if (rmax_end_epoch < rmax_start_epoch || dmax_end_epoch < dmax_start_epoch) {
    throw ConfigError("schedule end epochs must not precede start epochs");
  }
  if (alpha_rate < 0.0 || alpha_cap < 0.0 || alpha_cap > 1.0) throw ConfigError("invalid alpha schedule");
}

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"dropblock_ramp_epochs", c.dropblock_ramp_epochs},
       {"rmax_final", c.rmax_final},
       {"rmax_start_epoch", c.rmax_start_epoch},
       {"rmax_end_epoch", c.rmax_end_epoch},
       {"dmax_final", c.dmax_final},
       {"dmax_start_epoch", c.dmax_start_epoch},
       {"dmax_end_epoch", c.dmax_end_epoch},
       {"alpha_rate", c.alpha_rate},
       {"alpha_cap", c.alpha_cap}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  const ScheduleConfig d;
  c.dropblock_ramp_epochs = j.value("dropblock_ramp_epochs", d.dropblock_ramp_epochs);
  c.rmax_final = j.value("rmax_final", d.rmax_final);
  c.rmax_start_epoch = j.value("rmax_start_epoch", d.rmax_start_epoch);
  c.rmax_end_epoch = j.value("rmax_end_epoch", d.rmax_end_epoch);
  c.dmax_final = j.value("dmax_final", d.dmax_final);
  c.dmax_start_epoch = j.value("dmax_start_epoch", d.dmax_start_epoch);
  c.dmax_end_epoch = j.value("dmax_end_epoch", d.dmax_end_epoch);
  c.alpha_rate = j.value("alpha_rate", d.alpha_rate);
  c.alpha_cap = j.value("alpha_cap", d.alpha_cap);
}

double linear_ramp(int epoch, int start, int end, double from, double to) {
  if (epoch <= start) return from;
  if (epoch >= end) return to;
  return from + (to - from) * static_cast<double>(epoch - start) / static_cast<double>(end - start);
}

ScheduleValues schedule_at(int epoch, const ScheduleConfig& s, double dropblock_max) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative, got " + std::to_string(epoch));
  ScheduleValues v;
  v.dropblock = s.dropblock_ramp_epochs == 0
                    ? dropblock_max
                    : linear_ramp(epoch, 0, s.dropblock_ramp_epochs, 0.0, dropblock_max);
  v.rmax = linear_ramp(epoch, s.rmax_start_epoch, s.rmax_end_epoch, 1.0, s.rmax_final);
  v.dmax = linear_ramp(epoch, s.dmax_start_epoch, s.dmax_end_epoch, 0.0, s.dmax_final);
  v.alpha = objective::alpha_schedule(epoch, s.alpha_rate, s.alpha_cap);
  return v;
}

ForwardOptions training_options(int epoch, const ScheduleConfig& s, const NetConfig& net,
                                std::uint64_t noise_seed) {
  const ScheduleValues v = schedule_at(epoch, s, net.dropblock_max);
  ForwardOptions o;
  o.mode = Mode::train;
  o.dropblock_prob = v.dropblock;
  o.rmax = v.rmax;
  o.dmax = v.dmax;
  o.noise_seed = noise_seed;
  return o;
}

}  // namespace tof
