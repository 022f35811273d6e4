#pragma once

// Coregistration-tolerant accuracy: a labeled tree counts as found when any
// prediction lies in its 3x3 neighborhood, and a predicted tree counts as a
// false positive only when no label lies in its 3x3 neighborhood.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tof/raster.hpp"

namespace tof {

struct ToleranceConfusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  ToleranceConfusion& operator+=(const ToleranceConfusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ToleranceConfusion&, const ToleranceConfusion&) = default;
};

/// Counts with a Chebyshev-radius-1 tolerance; tn is every remaining pixel.
ToleranceConfusion tolerant_confusion(const LabelGrid& truth, const LabelGrid& pred);
/// Plain per-pixel counts.
ToleranceConfusion strict_confusion(const LabelGrid& truth, const LabelGrid& pred);

struct Accuracy {
  std::optional<double> ua;  // tp / (tp + fp), undefined when no predicted positives
  std::optional<double> pa;  // tp / (tp + fn), undefined when no label positives
  std::optional<double> oa;  // (tp + tn) / total
};

Accuracy users_producers(const ToleranceConfusion& c);

/// Pearson product-moment correlation; undefined for n < 2 or zero variance.
std::optional<double> pearson_corr(std::span<const double> x, std::span<const double> y);

/// Cover decile 0..9 of `positives` out of `total` cells.
int cover_decile(std::size_t positives, std::size_t total);

struct PlotPair {
  std::string plot_id;
  LabelGrid truth;
  LabelGrid pred;
};

struct MeanWithCi {
  std::optional<double> mean;
  std::optional<std::array<double, 2>> ci95;
};

struct DecileReport {
  int decile = 0;
  std::size_t plots = 0;
  ToleranceConfusion confusion;
  Accuracy accuracy;
  MeanWithCi cover_error;
};

struct EvaluationReport {
  ToleranceConfusion confusion;
  Accuracy overall;
  std::vector<DecileReport> per_decile;
  MeanWithCi cover_error;
  std::optional<double> pearson;
  std::vector<double> label_cover;
  std::vector<double> pred_cover;
};

/// Mean and bootstrap 95% interval (percentile method, seeded).
MeanWithCi bootstrap_mean(std::span<const double> values, std::size_t resamples, std::uint64_t seed);

/// Pools plot-level results; plots are bucketed by label cover decile.
EvaluationReport evaluate_plots(const std::vector<PlotPair>& plots, std::uint64_t seed = 0,
                                std::size_t resamples = 1000);

nlohmann::json to_json(const EvaluationReport& r);

}  // namespace tof
