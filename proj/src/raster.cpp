#include "tof/raster.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tof {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::string_view channel_name(Channel c) { return kChannelNames.at(channel_index(c)); }

std::optional<Channel> channel_from_name(std::string_view name) {
  for (int i = 0; i < kNumChannels; ++i) {
    if (kChannelNames[i] == name) return static_cast<Channel>(i);
  }
  return std::nullopt;
}

std::vector<int> step_days() {
  std::vector<int> days(kTimeSteps);
  for (int t = 0; t < kTimeSteps; ++t) days[t] = kFirstStepDay + kStepSpacingDays * t;
  return days;
}

TimeSeriesStack::TimeSeriesStack(FloatArray data, std::vector<int> timestamps, std::string plot_id)
    : data_(std::move(data)), timestamps_(std::move(timestamps)), plot_id_(std::move(plot_id)) {
  require_rank(data_, 4, "stack");
  if (data_.dim(0) != static_cast<std::size_t>(kTimeSteps)) {
    throw ShapeError("stack", "expected " + std::to_string(kTimeSteps) + " time steps, got " +
                                  std::to_string(data_.dim(0)));
  }
  if (data_.dim(3) != static_cast<std::size_t>(kNumChannels)) {
    throw ShapeError("stack", "expected 16 channels, got " + std::to_string(data_.dim(3)));
  }
  if (timestamps_.size() != data_.dim(0)) {
    throw ShapeError("timestamps", "expected " + std::to_string(data_.dim(0)) + " entries");
  }
  for (std::size_t t = 1; t < timestamps_.size(); ++t) {
    if (timestamps_[t] - timestamps_[t - 1] != kStepSpacingDays) {
      throw DataError("timestamps must be strictly increasing with 15-day spacing");
    }
  }
  for (float v : data_.values()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw DataError("stack values must be finite and within [0, 1]");
    }
  }
  const std::size_t slope = channel_index(Channel::SLOPE);
  for (std::size_t t = 1; t < steps(); ++t) {
    for (std::size_t y = 0; y < height(); ++y) {
      for (std::size_t x = 0; x < width(); ++x) {
        if (data_(t, y, x, slope) != data_(0, y, x, slope)) {
          throw DataError("SLOPE channel must be identical across time steps");
        }
      }
    }
  }
}

Tensor TimeSeriesStack::to_input(int time_stride) const {
  if (time_stride < 1 || kTimeSteps % time_stride != 0) {
    throw ConfigError("time stride must divide 24, got " + std::to_string(time_stride));
  }
  const std::size_t steps_out = steps() / static_cast<std::size_t>(time_stride);
  const std::size_t frame = height() * width() * kNumChannels;
  Tensor out({steps_out, height(), width(), static_cast<std::size_t>(kNumChannels)});
  for (std::size_t t = 0; t < steps_out; ++t) {
    const float* src = data_.data() + t * time_stride * frame;
    std::copy(src, src + frame, out.data() + t * frame);
  }
  return out;
}

QualityMask::QualityMask(ByteArray contaminated) : contaminated_(std::move(contaminated)) {
  require_rank(contaminated_, 3, "quality_mask");
}

LabelGrid::LabelGrid(ByteArray values) : values_(std::move(values)) {
  require_rank(values_, 2, "labels");
  for (auto v : values_.values()) {
    if (v > 1) throw DataError("labels must be binary 0/1");
  }
}

std::size_t LabelGrid::positives() const {
  return static_cast<std::size_t>(std::count(values_.values().begin(), values_.values().end(), 1));
}

double LabelGrid::cover() const {
  return values_.empty() ? 0.0
                         : static_cast<double>(positives()) / static_cast<double>(values_.size());
}

PredictionGrid::PredictionGrid(Tensor probs) : probs_(std::move(probs)) {
  require_rank(probs_, 2, "probs");
  for (double p : probs_.values()) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw DataError("probabilities must be finite and within [0, 1]");
    }
  }
}

PlotSample::PlotSample(TimeSeriesStack s, LabelGrid l)
    : stack(std::move(s)), label(std::move(l)), cover(label.cover()) {
  if (label.height() != stack.height() || label.width() != stack.width()) {
    throw ShapeError("label", "label grid does not match stack extent");
  }
}

namespace {

void require_spatial(const FloatArray& a, std::size_t h, std::size_t w, const std::string& name) {
  if (a.dim(1) != h || a.dim(2) != w) {
    throw ShapeError(name, "spatial extent " + shape_to_string(a.shape()) + " differs from s2");
  }
}

}  // namespace

TimeSeriesStack build_stack(const FloatArray& s2, const FloatArray& s1, const FloatArray& indices,
                            const FloatArray& slope, std::vector<int> timestamps,
                            std::string plot_id) {
  require_rank(s2, 4, "s2");
  require_rank(s1, 4, "s1");
  require_rank(indices, 4, "indices");
  require_rank(slope, 2, "slope");
  const std::size_t steps = s2.dim(0);
  const std::size_t h = s2.dim(1);
  const std::size_t w = s2.dim(2);
  if (steps != static_cast<std::size_t>(kTimeSteps)) {
    throw ShapeError("s2", "expected 24 time steps, got " + std::to_string(steps));
  }
  if (s2.dim(3) != kOpticalBands) throw ShapeError("s2", "expected 10 bands");
  if (s1.dim(3) != kRadarBands) throw ShapeError("s1", "expected 2 bands");
  if (indices.dim(3) != kIndexBands) throw ShapeError("indices", "expected 3 bands");
  if (s1.dim(0) != steps) {
    throw ShapeError("s1", "expected " + std::to_string(steps) + " time steps, got " +
                               std::to_string(s1.dim(0)));
  }
  if (indices.dim(0) != steps) {
    throw ShapeError("indices", "expected " + std::to_string(steps) + " time steps, got " +
                                    std::to_string(indices.dim(0)));
  }
  require_spatial(s1, h, w, "s1");
  require_spatial(indices, h, w, "indices");
  if (slope.dim(0) != h || slope.dim(1) != w) throw ShapeError("slope", "extent differs from s2");

  FloatArray data({steps, h, w, static_cast<std::size_t>(kNumChannels)});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        float* px = &data(t, y, x, std::size_t{0});
        for (int b = 0; b < kOpticalBands; ++b) px[b] = s2(t, y, x, static_cast<std::size_t>(b));
        for (int b = 0; b < kIndexBands; ++b) {
          px[kOpticalBands + b] = indices(t, y, x, static_cast<std::size_t>(b));
        }
        for (int b = 0; b < kRadarBands; ++b) {
          px[channel_index(Channel::VV) + b] = s1(t, y, x, static_cast<std::size_t>(b));
        }
        px[channel_index(Channel::SLOPE)] = slope(y, x);
      }
    }
  }
  return TimeSeriesStack(std::move(data), std::move(timestamps), std::move(plot_id));
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DataError(std::string("non-finite ") + what + " value");
}

template <class F>
FloatArray map_finite(const FloatArray& a, const char* what, F f) {
  FloatArray out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    require_finite(a[i], what);
    out[i] = static_cast<float>(f(static_cast<double>(a[i])));
  }
  return out;
}

}  // namespace

double normalize_reflectance(double raw, const NormalizationConfig& cfg) {
  require_finite(raw, "reflectance");
  return clamp01(raw / cfg.reflectance_scale);
}

double normalize_backscatter(double db, const NormalizationConfig& cfg) {
  require_finite(db, "backscatter");
  return clamp01((db - cfg.backscatter_min_db) / (cfg.backscatter_max_db - cfg.backscatter_min_db));
}

double normalize_slope(double percent, const NormalizationConfig& cfg) {
  require_finite(percent, "slope");
  return clamp01(percent / cfg.slope_max_percent);
}

double normalize_index(double value, const NormalizationConfig& cfg) {
  require_finite(value, "index");
  const double c = std::clamp(value, cfg.index_min, cfg.index_max);
  return (c - cfg.index_min) / (cfg.index_max - cfg.index_min);
}

double denormalize_reflectance(double unit, const NormalizationConfig& cfg) {
  return unit * cfg.reflectance_scale;
}

double denormalize_backscatter(double unit, const NormalizationConfig& cfg) {
  return cfg.backscatter_min_db + unit * (cfg.backscatter_max_db - cfg.backscatter_min_db);
}

FloatArray normalize_s2(const FloatArray& raw, const NormalizationConfig& cfg) {
  return map_finite(raw, "reflectance", [&](double v) { return normalize_reflectance(v, cfg); });
}

FloatArray normalize_s1(const FloatArray& raw_db, const NormalizationConfig& cfg) {
  return map_finite(raw_db, "backscatter", [&](double v) { return normalize_backscatter(v, cfg); });
}

FloatArray normalize_slope_grid(const FloatArray& percent, const NormalizationConfig& cfg) {
  return map_finite(percent, "slope", [&](double v) { return normalize_slope(v, cfg); });
}

FloatArray clamp_unit(const FloatArray& a) {
  return map_finite(a, "normalized", [](double v) { return clamp01(v); });
}

}  // namespace tof
