#include "tof/nn/params.hpp"

#include <cmath>

namespace tof::nn {

std::size_t ParamStore::add(std::string name, Shape shape, bool learnable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  ParamInfo info;
  info.count = Array<double>::element_count(shape);
  info.offset = values_.size();
  info.name = std::move(name);
  info.shape = std::move(shape);
  info.learnable = learnable;
  values_.resize(values_.size() + info.count, 0.0);
  index_.emplace(info.name, entries_.size());
  entries_.push_back(std::move(info));
  return entries_.size() - 1;
}

std::size_t ParamStore::id(std::string_view name) const {
  auto found = find(name);
  if (!found) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return *found;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::learnable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.learnable ? e.count : 0;
  return n;
}

void ParamStore::round_to_float() {
  for (auto& v : values_) v = static_cast<double>(static_cast<float>(v));
}

std::optional<std::string> ParamStore::first_non_finite() const {
  for (const auto& e : entries_) {
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::isfinite(values_[e.offset + i])) return e.name;
    }
  }
  return std::nullopt;
}

bool ParamStore::layout_equal(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.learnable != b.learnable) return false;
  }
  return true;
}

Gradients::Gradients(const ParamStore& params) : values_(params.size(), 0.0) {
  for (const auto& e : params.entries()) offsets_.push_back(e.offset);
}

void Gradients::zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
}

void Gradients::scale(double s) {
  for (auto& v : values_) v *= s;
}

double Gradients::global_norm() const {
  double sq = 0.0;
  for (double v : values_) sq += v * v;
  return std::sqrt(sq);
}

void init_constant(std::span<double> v, double value) { std::fill(v.begin(), v.end(), value); }

void init_normal(std::span<double> v, double stddev, Rng& rng) {
  for (auto& x : v) x = rng.normal(0.0, stddev);
}

void init_glorot_uniform(std::span<double> v, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : v) x = rng.uniform(-limit, limit);
}

void init_he_normal(std::span<double> v, std::size_t fan_in, Rng& rng) {
  init_normal(v, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace tof::nn
