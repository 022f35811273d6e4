#include "tof/inference.hpp"

#include <algorithm>
#include <cmath>

namespace tof {

void BlendPlan::validate() const {
  if (window == 0 || stride == 0 || stride > window) throw ConfigError("need 0 < stride <= window");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
}

std::vector<std::size_t> BlendPlan::offsets(std::size_t n) const {
  validate();
  if (n < window) {
    throw ShapeError("scene", "extent " + std::to_string(n) + " is smaller than the " +
                                  std::to_string(window) + " px window");
  }
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + window <= n; o += stride) out.push_back(o);
  if (out.back() + window < n) out.push_back(n - window);
  return out;
}

Tensor BlendPlan::weights() const {
  Tensor w({window, window});
  const double c = (static_cast<double>(window) - 1.0) / 2.0;
  for (std::size_t y = 0; y < window; ++y) {
    for (std::size_t x = 0; x < window; ++x) {
      const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
      w(y, x) = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
  }
  return w;
}

Tensor predict_scene(const Tensor& scene, const WindowModel& model, const BlendPlan& plan) {
  require_rank(scene, 4, "scene");
  const std::size_t t_len = scene.dim(0), h = scene.dim(1), w = scene.dim(2), c = scene.dim(3);
  const auto ys = plan.offsets(h);
  const auto xs = plan.offsets(w);
  const Tensor weight = plan.weights();
  const std::size_t win = plan.window;
  // Running weighted mean: exact for constant window outputs.
  Tensor mean({h, w}), norm({h, w});
  Tensor window({t_len, win, win, c});
  for (std::size_t oy : ys) {
    for (std::size_t ox : xs) {
      for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t y = 0; y < win; ++y) {
          std::copy_n(&scene(t, oy + y, ox, std::size_t{0}), win * c, &window(t, y, std::size_t{0}, std::size_t{0}));
        }
      }
      const Tensor p = model(window);
      require_shape(p, {win, win}, "window prediction");
      for (std::size_t y = 0; y < win; ++y) {
        for (std::size_t x = 0; x < win; ++x) {
          double& n = norm(oy + y, ox + x);
          double& m = mean(oy + y, ox + x);
          n += weight(y, x);
          m += weight(y, x) / n * (p(y, x) - m);
        }
      }
    }
  }
  return mean;
}

PredictionGrid predict_scene(const TimeSeriesStack& stack, const Network& net, const BlendPlan& plan,
                             int time_stride) {
  const Tensor input = stack.to_input(time_stride);
  Tensor probs = predict_scene(input, [&](const Tensor& win) { return net.predict(win); }, plan);
  for (auto& v : probs.storage()) v = std::clamp(v, 0.0, 1.0);
  return PredictionGrid(std::move(probs));
}

double youden_j(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold) {
  double tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i]) (pred ? tp : fn) += 1;
    else (pred ? fp : tn) += 1;
  }
  return tp / (tp + fn) + tn / (tn + fp) - 1.0;
}

double select_threshold(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) throw ShapeError("labels", "length differs from probs");
  std::size_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  if (pos == 0 || pos == labels.size()) throw DataError("threshold selection needs both classes");

  std::vector<std::pair<double, bool>> sorted;
  sorted.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) sorted.emplace_back(probs[i], labels[i] != 0);
  std::sort(sorted.begin(), sorted.end());
  const double n_pos = static_cast<double>(pos);
  const double n_neg = static_cast<double>(labels.size() - pos);

  // Thresholds in (v[k-1], v[k]] over the sorted distinct values give the
  // same confusion counts; each interval contributes its candidate nearest
  // 0.5 inside (0, 1).
  double best_j = -2.0, best_t = 0.5;
  double below_pos = 0, below_neg = 0;
  double lo = 0.0;
  std::size_t i = 0;
  while (true) {
    const bool last = i == sorted.size();
    const double hi = last ? 1.0 : sorted[i].first;
    if (hi > lo || (last && lo < 1.0)) {
      double t;
      if (lo < 0.5 && 0.5 <= hi) t = 0.5;
      else t = 0.5 * (lo + hi);
      if (t > 0.0 && t < 1.0) {
        const double j = (n_pos - below_pos) / n_pos + below_neg / n_neg - 1.0;
        const bool better = j > best_j + 1e-12;
        const bool tie = std::abs(j - best_j) <= 1e-12 && std::abs(t - 0.5) < std::abs(best_t - 0.5);
        if (better || tie) {
          best_j = j;
          best_t = t;
        }
      }
    }
    if (last) break;
    const double v = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == v) {
      (sorted[i].second ? below_pos : below_neg) += 1;
      ++i;
    }
    lo = std::max(lo, v);
  }
  return best_t;
}

LabelGrid binarize(const Tensor& probs, double threshold) {
  require_rank(probs, 2, "probs");
  ByteArray out(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
  return LabelGrid(std::move(out));
}

}  // namespace tof
