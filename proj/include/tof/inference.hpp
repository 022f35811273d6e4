#pragma once

// Scene-scale prediction by overlapping 14x14 windows blended with a
// Gaussian weight map, ROC threshold selection and binarization.

#include <functional>
#include <span>
#include <vector>

#include "tof/network.hpp"
#include "tof/raster.hpp"

namespace tof {

struct BlendPlan {
  std::size_t window = kPlotSize;
  std::size_t stride = 7;
  double sigma = 3.5;

  /// Window origins along an axis of length n: 0, stride, 2*stride, ...
  /// plus a final window clamped to n - window. Throws ShapeError if n < window.
  std::vector<std::size_t> offsets(std::size_t n) const;
  /// [window, window] Gaussian centered at (window - 1) / 2.
  Tensor weights() const;
  void validate() const;
};

/// Maps one [T, window, window, C] window to [window, window] probabilities.
using WindowModel = std::function<Tensor(const Tensor&)>;

/// Blended [H, W] probabilities for a [T, H, W, C] scene input.
Tensor predict_scene(const Tensor& scene, const WindowModel& model, const BlendPlan& plan = {});

PredictionGrid predict_scene(const TimeSeriesStack& stack, const Network& net,
                             const BlendPlan& plan = {}, int time_stride = 1);

/// Threshold maximizing Youden's J over the ROC; ties resolve toward 0.5.
/// Throws DataError unless both classes occur.
double select_threshold(std::span<const double> probs, std::span<const std::uint8_t> labels);

/// Youden's J of the rule "positive iff prob >= threshold".
double youden_j(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold);

/// positive iff prob >= threshold.
LabelGrid binarize(const Tensor& probs, double threshold);

}  // namespace tof
