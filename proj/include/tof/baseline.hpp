#pragma once

// Per-pixel logistic regression on temporal-mean features: the reference
// model the network is compared against.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tof/raster.hpp"

namespace tof {

struct LogisticConfig {
  int iterations = 500;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  bool balance_classes = true;
  std::uint64_t seed = 0;
};

class LogisticBaseline {
 public:
  LogisticBaseline() = default;

  /// Fits on feature rows with 0/1 targets. Features are standardized internally.
  static LogisticBaseline fit(const Eigen::MatrixXd& features, const std::vector<std::uint8_t>& targets,
                              const LogisticConfig& cfg = {});
  /// Fits on plots using temporal_mean_features, then picks the ROC threshold
  /// on the training pixels.
  static LogisticBaseline fit(const std::vector<PlotSample>& data, const LogisticConfig& cfg = {});

  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& features) const;
  /// [H, W] probabilities.
  Tensor predict(const TimeSeriesStack& stack) const;

  double threshold() const noexcept { return threshold_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  double bias() const noexcept { return bias_; }

 private:
  Eigen::VectorXd mean_, scale_, weights_;
  double bias_ = 0.0;
  double threshold_ = 0.5;
};

/// One row per pixel (row-major), one column per channel: the channel's mean over time.
Eigen::MatrixXd temporal_mean_features(const TimeSeriesStack& stack);

}  // namespace tof
