#include "tof/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "tof/random.hpp"

namespace tof {

namespace {

void require_same_shape(const LabelGrid& a, const LabelGrid& b) {
  if (a.values().shape() != b.values().shape()) {
    throw ShapeError("pred", "label " + shape_to_string(a.values().shape()) + " vs prediction " +
                                 shape_to_string(b.values().shape()));
  }
}

/// 1 where any cell of `g` in the 3x3 neighborhood is set (borders truncated).
ByteArray dilate3(const ByteArray& g) {
  const std::size_t h = g.dim(0), w = g.dim(1);
  ByteArray out(g.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!g(y, x)) continue;
      for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(y + 1, h - 1); ++yy) {
        for (std::size_t xx = x > 0 ? x - 1 : 0; xx <= std::min(x + 1, w - 1); ++xx) out(yy, xx) = 1;
      }
    }
  }
  return out;
}

}  // namespace

ToleranceConfusion tolerant_confusion(const LabelGrid& truth, const LabelGrid& pred) {
  require_same_shape(truth, pred);
  const ByteArray near_pred = dilate3(pred.values());
  const ByteArray near_truth = dilate3(truth.values());
  ToleranceConfusion c;
  const auto& y = truth.values();
  const auto& p = pred.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i]) {
      (near_pred[i] ? c.tp : c.fn) += 1;
    } else if (p[i] && !near_truth[i]) {
      c.fp += 1;
    }
  }
  c.tn = y.size() - c.tp - c.fp - c.fn;
  return c;
}

ToleranceConfusion strict_confusion(const LabelGrid& truth, const LabelGrid& pred) {
  require_same_shape(truth, pred);
  ToleranceConfusion c;
  const auto& y = truth.values();
  const auto& p = pred.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i]) (p[i] ? c.tp : c.fn) += 1;
    else (p[i] ? c.fp : c.tn) += 1;
  }
  return c;
}

Accuracy users_producers(const ToleranceConfusion& c) {
  Accuracy a;
  const auto tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) a.ua = tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) a.pa = tp / static_cast<double>(c.tp + c.fn);
  const std::uint64_t total = c.tp + c.fp + c.fn + c.tn;
  if (total > 0) a.oa = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
  return a;
}

std::optional<double> pearson_corr(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("y", "length differs from x");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

int cover_decile(std::size_t positives, std::size_t total) {
  if (total == 0) throw DataError("empty grid");
  return static_cast<int>(std::min<std::size_t>(positives * 10 / total, 9));
}

MeanWithCi bootstrap_mean(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  MeanWithCi out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  out.mean = sum / n;
  if (resamples == 0) return out;
  Rng rng(seed);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[rng.below(values.size())];
    m = s / n;
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  out.ci95 = std::array<double, 2>{quantile(0.025), quantile(0.975)};
  return out;
}

EvaluationReport evaluate_plots(const std::vector<PlotPair>& plots, std::uint64_t seed,
                                std::size_t resamples) {
  if (plots.empty()) throw DataError("no plots to evaluate");
  EvaluationReport r;
  std::array<std::vector<double>, 10> decile_errors;
  std::array<DecileReport, 10> deciles;
  std::vector<double> errors;
  for (const auto& p : plots) {
    const auto c = tolerant_confusion(p.truth, p.pred);
    r.confusion += c;
    const double lc = p.truth.cover(), pc = p.pred.cover();
    r.label_cover.push_back(lc);
    r.pred_cover.push_back(pc);
    errors.push_back(std::abs(pc - lc));
    const int d = cover_decile(p.truth.positives(), p.truth.values().size());
    deciles[d].plots += 1;
    deciles[d].confusion += c;
    decile_errors[d].push_back(errors.back());
  }
  r.overall = users_producers(r.confusion);
  r.cover_error = bootstrap_mean(errors, resamples, seed);
  r.pearson = pearson_corr(r.label_cover, r.pred_cover);
  for (int d = 0; d < 10; ++d) {
    if (deciles[d].plots == 0) continue;
    deciles[d].decile = d;
    deciles[d].accuracy = users_producers(deciles[d].confusion);
    deciles[d].cover_error = bootstrap_mean(decile_errors[d], resamples, derive_seed(seed, {static_cast<std::uint64_t>(d)}));
    r.per_decile.push_back(deciles[d]);
  }
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json ci_json(const MeanWithCi& m) {
  return {{"mean", opt(m.mean)},
          {"ci95", m.ci95 ? nlohmann::json(*m.ci95) : nlohmann::json(nullptr)}};
}

nlohmann::json confusion_json(const ToleranceConfusion& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

}  // namespace

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["overall"] = {{"ua", opt(r.overall.ua)},
                  {"pa", opt(r.overall.pa)},
                  {"oa", opt(r.overall.oa)},
                  {"confusion", confusion_json(r.confusion)},
                  {"plots", r.label_cover.size()}};
  j["per_decile"] = nlohmann::json::array();
  for (const auto& d : r.per_decile) {
    j["per_decile"].push_back({{"decile", d.decile},
                               {"cover_range", {d.decile / 10.0, (d.decile + 1) / 10.0}},
                               {"plots", d.plots},
                               {"ua", opt(d.accuracy.ua)},
                               {"pa", opt(d.accuracy.pa)},
                               {"oa", opt(d.accuracy.oa)},
                               {"confusion", confusion_json(d.confusion)},
                               {"cover_error", ci_json(d.cover_error)}});
  }
  j["cover_error"] = ci_json(r.cover_error);
  j["pearson"] = opt(r.pearson);
  return j;
}

}  // namespace tof
