#include "tof/objective.hpp"

#include <algorithm>
#include <cmath>

#include "tof/distance_transform.hpp"

namespace tof::objective {

double alpha_schedule(int epoch, double rate, double cap) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative, got " + std::to_string(epoch));
  return std::min(rate * epoch, cap);
}

ClassWeights class_weights(std::uint64_t n_negative, std::uint64_t n_positive, double beta) {
  if (n_negative == 0 && n_positive == 0) throw DataError("class counts are both zero");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
  auto raw = [beta](std::uint64_t n) {
    return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n)));
  };
  double neg = n_negative ? raw(n_negative) : 0.0;
  double pos = n_positive ? raw(n_positive) : 0.0;
  if (!n_negative) neg = pos;
  if (!n_positive) pos = neg;
  const double mean = 0.5 * (neg + pos);
  return {neg / mean, pos / mean};
}

Tensor signed_distance_map(const LabelGrid& y) {
  const auto& v = y.values();
  const std::size_t pos = y.positives();
  Tensor phi(v.shape());
  if (pos == 0) {
    phi.fill(1.0);
    return phi;
  }
  if (pos == v.size()) {
    phi.fill(-1.0);
    return phi;
  }
  ByteArray negatives(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) negatives[i] = v[i] ? 0 : 1;
  const Tensor to_positive = euclidean_distance_to(v);
  const Tensor to_negative = euclidean_distance_to(negatives);
  for (std::size_t i = 0; i < v.size(); ++i) phi[i] = v[i] ? -to_negative[i] : to_positive[i];
  return phi;
}

namespace {

void require_same(const Tensor& p, const LabelGrid& y) {
  if (p.rank() != 2 || p.dim(0) != y.height() || p.dim(1) != y.width()) {
    throw ShapeError("p", "prediction " + shape_to_string(p.shape()) + " vs label " +
                              shape_to_string(y.values().shape()));
  }
}

double smoothed_target(bool positive) {
  return positive ? 1.0 - kLabelSmoothing / 2.0 : kLabelSmoothing / 2.0;
}

}  // namespace

double smoothed_weighted_ce(const PredictionGrid& pg, const LabelGrid& y, ClassWeights w) {
  const Tensor& p = pg.probs();
  require_same(p, y);
  const auto& lab = y.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double t = smoothed_target(lab[i] != 0);
    sum += w[lab[i] != 0] * -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
  }
  return sum / static_cast<double>(p.size());
}

double boundary_loss(const PredictionGrid& pg, const LabelGrid& y) {
  const Tensor& p = pg.probs();
  require_same(p, y);
  const Tensor phi = signed_distance_map(y);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += phi[i] * p[i];
  return sum / static_cast<double>(p.size());
}

double clipped_ce(const PredictionGrid& pg, const LabelGrid& y) {
  const Tensor& p = pg.probs();
  require_same(p, y);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 0.1, 0.9);
    sum += y.values()[i] ? -std::log(q) : -std::log(1.0 - q);
  }
  return sum / static_cast<double>(p.size());
}

LossTerms combined_loss(const PredictionGrid& p, const LabelGrid& y, int epoch, ClassWeights w) {
  LossTerms terms;
  terms.alpha = alpha_schedule(epoch);
  terms.ce = smoothed_weighted_ce(p, y, w);
  terms.bl = boundary_loss(p, y);
  terms.total = (1.0 - terms.alpha) * terms.ce + terms.alpha * terms.bl;
  terms.class_weights = w;
  return terms;
}

LossGradient combined_loss_with_grad(const Tensor& p, const LabelGrid& y, const Tensor& phi,
                                     double alpha, ClassWeights w) {
  require_same(p, y);
  require_shape(phi, p.shape(), "phi");
  const auto& lab = y.values();
  const double n = static_cast<double>(p.size());
  LossGradient out;
  out.d_probs = Tensor(p.shape());
  double ce = 0.0;
  double bl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pos = lab[i] != 0;
    const double t = smoothed_target(pos);
    const bool clamped = p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp;
    const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    ce += w[pos] * -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
    bl += phi[i] * p[i];
    const double dce = clamped ? 0.0 : w[pos] * (-t / q + (1.0 - t) / (1.0 - q));
    out.d_probs[i] = ((1.0 - alpha) * dce + alpha * phi[i]) / n;
  }
  out.terms.ce = ce / n;
  out.terms.bl = bl / n;
  out.terms.alpha = alpha;
  out.terms.total = (1.0 - alpha) * out.terms.ce + alpha * out.terms.bl;
  out.terms.class_weights = w;
  return out;
}

}  // namespace tof::objective
