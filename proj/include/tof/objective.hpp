#pragma once

// Training objective: (1 - alpha) * CE + alpha * BL with alpha ramping by
// 0.01 per epoch up to 0.5. CE is class-weighted, label-smoothed binary cross
// entropy; BL integrates probabilities against the signed distance map of the
// label's positive segments.

#include <cstdint>

#include "tof/raster.hpp"

namespace tof::objective {

inline constexpr double kLabelSmoothing = 0.10;
inline constexpr double kProbabilityClamp = 1e-7;

/// min(rate * epoch, cap). Throws ConfigError for a negative epoch.
double alpha_schedule(int epoch, double rate = 0.01, double cap = 0.5);

struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;
  double operator[](bool positive_class) const { return positive_class ? positive : negative; }
};

/// Effective-number weights (1 - beta) / (1 - beta^n_c), rescaled to mean 1.
/// A class with zero samples takes the largest weight among present classes.
ClassWeights class_weights(std::uint64_t n_negative, std::uint64_t n_positive, double beta = 0.999);

/// Signed Euclidean distance map: -(distance to the nearest negative pixel)
/// on positives, +(distance to the nearest positive pixel) on negatives.
/// All-negative labels give +1 everywhere, all-positive labels -1.
Tensor signed_distance_map(const LabelGrid& y);

/// Mean over pixels of w_y * BCE(p, y') with y' = 0.9 y + 0.05.
double smoothed_weighted_ce(const PredictionGrid& p, const LabelGrid& y, ClassWeights w);

/// Mean over pixels of phi_G(y) * p.
double boundary_loss(const PredictionGrid& p, const LabelGrid& y);

/// The literal form with p clipped to [0.1, 0.9] (evaluation only; its
/// gradient vanishes in the clipped region).
double clipped_ce(const PredictionGrid& p, const LabelGrid& y);

struct LossTerms {
  double ce = 0.0;
  double bl = 0.0;
  double alpha = 0.0;
  double total = 0.0;
  ClassWeights class_weights;
};

LossTerms combined_loss(const PredictionGrid& p, const LabelGrid& y, int epoch, ClassWeights w);

struct LossGradient {
  LossTerms terms;
  Tensor d_probs;  // d total / d p, same shape as p
};

/// Loss terms and gradient w.r.t. raw probabilities; `phi` is the
/// precomputed signed distance map of `y`.
LossGradient combined_loss_with_grad(const Tensor& p, const LabelGrid& y, const Tensor& phi,
                                     double alpha, ClassWeights w);

}  // namespace tof::objective
