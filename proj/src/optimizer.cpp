#include "tof/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace tof {

void AdaBoundConfig::validate() const {
  if (!(lr > 0.0) || !(final_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(gamma > 0.0) || !(eps > 0.0)) throw ConfigError("gamma and eps must be > 0");
  if (!(min_rate > 0.0 && min_rate <= max_rate)) throw ConfigError("need 0 < min_rate <= max_rate");
}

void to_json(nlohmann::json& j, const AdaBoundConfig& c) {
  j = {{"lr", c.lr},       {"final_lr", c.final_lr}, {"beta1", c.beta1},
       {"beta2", c.beta2}, {"gamma", c.gamma},       {"eps", c.eps},
       {"min_rate", c.min_rate}, {"max_rate", c.max_rate}};
}

void from_json(const nlohmann::json& j, AdaBoundConfig& c) {
  const AdaBoundConfig d;
  c.lr = j.value("lr", d.lr);
  c.final_lr = j.value("final_lr", d.final_lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.gamma = j.value("gamma", d.gamma);
  c.eps = j.value("eps", d.eps);
  c.min_rate = j.value("min_rate", d.min_rate);
  c.max_rate = j.value("max_rate", d.max_rate);
}

AdaBound::AdaBound(AdaBoundConfig config, const nn::ParamStore& params)
    : AdaBound(config, params, OptimizerState{}) {}

AdaBound::AdaBound(AdaBoundConfig config, const nn::ParamStore& params, OptimizerState state)
    : config_(config), state_(std::move(state)), learnable_(params.size(), 0) {
  config_.validate();
  for (const auto& e : params.entries()) {
    std::fill_n(learnable_.begin() + static_cast<std::ptrdiff_t>(e.offset), e.count, e.learnable ? 1 : 0);
  }
  if (state_.m.empty() && state_.v.empty()) {
    state_.m.assign(params.size(), 0.0);
    state_.v.assign(params.size(), 0.0);
  }
  if (state_.m.size() != params.size() || state_.v.size() != params.size()) {
    throw ConfigError("optimizer state does not match the parameter layout");
  }
}

double AdaBound::lower_bound(std::uint64_t t) const {
  return config_.final_lr * (1.0 - 1.0 / (config_.gamma * static_cast<double>(t) + 1.0));
}

double AdaBound::upper_bound(std::uint64_t t) const {
  return config_.final_lr * (1.0 + 1.0 / (config_.gamma * static_cast<double>(t)));
}

void AdaBound::step(nn::ParamStore& params, const nn::Gradients& grads) {
  auto g = grads.flat();
  auto p = params.flat();
  if (g.size() != p.size()) throw ConfigError("gradient layout does not match parameters");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (learnable_[i] && !std::isfinite(g[i])) {
      for (const auto& e : params.entries()) {
        if (i >= e.offset && i < e.offset + e.count) throw NumericError(e.name, "gradient");
      }
    }
  }
  const std::uint64_t t = ++state_.step;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double step_size = config_.lr * std::sqrt(1.0 - std::pow(b2, static_cast<double>(t))) /
                           (1.0 - std::pow(b1, static_cast<double>(t)));
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  if (!config_.unbounded) {
    lo = std::max(lower_bound(t), config_.min_rate);
    hi = std::min(upper_bound(t), config_.max_rate);
  }
  last_min_rate_ = std::numeric_limits<double>::infinity();
  last_max_rate_ = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!learnable_[i]) continue;
    state_.m[i] = b1 * state_.m[i] + (1.0 - b1) * g[i];
    state_.v[i] = b2 * state_.v[i] + (1.0 - b2) * g[i] * g[i];
    const double rate = std::clamp(step_size / (std::sqrt(state_.v[i]) + config_.eps), lo, hi);
    last_min_rate_ = std::min(last_min_rate_, rate);
    last_max_rate_ = std::max(last_max_rate_, rate);
    p[i] -= rate * state_.m[i];
  }
}

}  // namespace tof
