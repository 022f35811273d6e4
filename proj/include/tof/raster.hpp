#pragma once

// Canonical data model shared by every stage: channel layout, time-series
// stacks, quality masks, label and prediction grids, and input normalization.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tof/tensor.hpp"

namespace tof {

inline constexpr int kTimeSteps = 24;
inline constexpr int kStepSpacingDays = 15;
inline constexpr int kFirstStepDay = 1;
inline constexpr int kPlotSize = 14;
inline constexpr int kNumChannels = 16;
inline constexpr int kOpticalBands = 10;
inline constexpr int kIndexBands = 3;
inline constexpr int kRadarBands = 2;
inline constexpr double kPixelMeters = 10.0;

enum class Channel : int {
  B2 = 0, B3, B4, B5, B6, B7, B8, B8A, B11, B12,
  EVI, MSAVI2, BI,
  VV, VH,
  SLOPE
};

inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {
    "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12",
    "EVI", "MSAVI2", "BI", "VV", "VH", "SLOPE"};

inline constexpr int channel_index(Channel c) { return static_cast<int>(c); }
std::string_view channel_name(Channel c);
std::optional<Channel> channel_from_name(std::string_view name);
inline constexpr bool is_optical(Channel c) { return channel_index(c) < kOpticalBands; }

/// Day-of-year of each of the 24 composite steps: 1, 16, ..., 346.
std::vector<int> step_days();

/// Normalized [T, H, W, 16] input tensor for one plot or scene window.
///
/// Construction validates every invariant: T = 24, finite values in [0, 1],
/// timestamps spaced exactly 15 days apart, and a SLOPE channel that is
/// constant over time. Instances are immutable afterwards.
class TimeSeriesStack {
 public:
  TimeSeriesStack(FloatArray data, std::vector<int> timestamps, std::string plot_id);

  const FloatArray& data() const noexcept { return data_; }
  const std::vector<int>& timestamps() const noexcept { return timestamps_; }
  const std::string& plot_id() const noexcept { return plot_id_; }
  std::size_t steps() const noexcept { return data_.dim(0); }
  std::size_t height() const noexcept { return data_.dim(1); }
  std::size_t width() const noexcept { return data_.dim(2); }
  float at(std::size_t t, std::size_t y, std::size_t x, Channel c) const {
    return data_(t, y, x, static_cast<std::size_t>(channel_index(c)));
  }

  /// Network input in double precision, optionally keeping every `stride`-th step.
  Tensor to_input(int time_stride = 1) const;

  friend bool operator==(const TimeSeriesStack&, const TimeSeriesStack&) = default;

 private:
  FloatArray data_;
  std::vector<int> timestamps_;
  std::string plot_id_;
};

/// Per-pixel cloud/shadow flags, [T, H, W].
class QualityMask {
 public:
  explicit QualityMask(ByteArray contaminated);
  const ByteArray& contaminated() const noexcept { return contaminated_; }
  bool operator()(std::size_t t, std::size_t y, std::size_t x) const {
    return contaminated_(t, y, x) != 0;
  }

 private:
  ByteArray contaminated_;
};

/// Binary tree-presence labels, [H, W].
class LabelGrid {
 public:
  LabelGrid() = default;
  explicit LabelGrid(ByteArray values);
  const ByteArray& values() const noexcept { return values_; }
  std::size_t height() const noexcept { return values_.dim(0); }
  std::size_t width() const noexcept { return values_.dim(1); }
  bool operator()(std::size_t y, std::size_t x) const { return values_(y, x) != 0; }
  std::size_t positives() const;
  double cover() const;

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;

 private:
  ByteArray values_;
};

/// Per-pixel tree probabilities in [0, 1], [H, W].
class PredictionGrid {
 public:
  PredictionGrid() = default;
  explicit PredictionGrid(Tensor probs);
  const Tensor& probs() const noexcept { return probs_; }
  std::size_t height() const noexcept { return probs_.dim(0); }
  std::size_t width() const noexcept { return probs_.dim(1); }
  double operator()(std::size_t y, std::size_t x) const { return probs_(y, x); }

 private:
  Tensor probs_;
};

struct PlotSample {
  TimeSeriesStack stack;
  LabelGrid label;
  double cover = 0.0;

  PlotSample(TimeSeriesStack s, LabelGrid l);
};

/// Assembles a stack from its normalized parts. s2 [T,H,W,10], s1 [T,H,W,2],
/// indices [T,H,W,3] and slope [H,W]; slope is replicated over time.
TimeSeriesStack build_stack(const FloatArray& s2, const FloatArray& s1, const FloatArray& indices,
                            const FloatArray& slope, std::vector<int> timestamps,
                            std::string plot_id);

struct NormalizationConfig {
  double reflectance_scale = 10000.0;
  double backscatter_min_db = -25.0;
  double backscatter_max_db = 0.0;
  double slope_max_percent = 100.0;
  double index_min = -1.5;
  double index_max = 1.5;
};

double normalize_reflectance(double raw, const NormalizationConfig& cfg = {});
double normalize_backscatter(double db, const NormalizationConfig& cfg = {});
double normalize_slope(double percent, const NormalizationConfig& cfg = {});
double normalize_index(double value, const NormalizationConfig& cfg = {});
double denormalize_reflectance(double unit, const NormalizationConfig& cfg = {});
double denormalize_backscatter(double unit, const NormalizationConfig& cfg = {});

/// Elementwise versions; throw DataError on non-finite input.
FloatArray normalize_s2(const FloatArray& raw, const NormalizationConfig& cfg = {});
FloatArray normalize_s1(const FloatArray& raw_db, const NormalizationConfig& cfg = {});
FloatArray normalize_slope_grid(const FloatArray& percent, const NormalizationConfig& cfg = {});

/// Final clamp into [0, 1]. Idempotent, and the identity on normalized data.
FloatArray clamp_unit(const FloatArray& a);

}  // namespace tof
