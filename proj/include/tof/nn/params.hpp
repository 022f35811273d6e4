#pragma once

// Named, ordered parameter tensors in one flat buffer, and a gradient buffer
// with the same layout.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tof/random.hpp"
#include "tof/tensor.hpp"

namespace tof::nn {

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t count = 0;
  bool learnable = true;
};

class ParamStore {
 public:
  /// Appends a zero-filled tensor and returns its id. Names must be unique.
  std::size_t add(std::string name, Shape shape, bool learnable = true);

  const std::vector<ParamInfo>& entries() const noexcept { return entries_; }
  const ParamInfo& info(std::size_t id) const { return entries_.at(id); }
  std::size_t id(std::string_view name) const;
  std::optional<std::size_t> find(std::string_view name) const;

  double* data(std::size_t id) { return values_.data() + entries_[id].offset; }
  const double* data(std::size_t id) const { return values_.data() + entries_[id].offset; }
  std::span<double> values(std::size_t id) { return {data(id), entries_[id].count}; }
  std::span<const double> values(std::size_t id) const { return {data(id), entries_[id].count}; }

  std::span<double> flat() noexcept { return values_; }
  std::span<const double> flat() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t learnable_count() const;

  /// Rounds every value to the nearest float32 so that float32 checkpoints
  /// reproduce the in-memory parameters exactly.
  void round_to_float();
  /// Name of the first tensor holding a non-finite value, if any.
  std::optional<std::string> first_non_finite() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.values_ == b.values_ && a.layout_equal(b);
  }
  bool layout_equal(const ParamStore& other) const;

 private:
  std::vector<ParamInfo> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  Buffer<double> values_;
};

/// Gradient accumulator with the layout of a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& params);

  double* data(std::size_t id) { return values_.data() + offsets_[id]; }
  const double* data(std::size_t id) const { return values_.data() + offsets_[id]; }
  std::span<double> flat() noexcept { return values_; }
  std::span<const double> flat() const noexcept { return values_; }

  void zero();
  void add(const Gradients& other);
  void scale(double s);
  double global_norm() const;

 private:
  std::vector<std::size_t> offsets_;
  Buffer<double> values_;
};

void init_constant(std::span<double> v, double value);
void init_normal(std::span<double> v, double stddev, Rng& rng);
/// U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
void init_glorot_uniform(std::span<double> v, std::size_t fan_in, std::size_t fan_out, Rng& rng);
/// N(0, 2 / fan_in).
void init_he_normal(std::span<double> v, std::size_t fan_in, Rng& rng);

}  // namespace tof::nn
