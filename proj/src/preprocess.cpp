#include "tof/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "tof/detail/grid.hpp"
#include "tof/distance_transform.hpp"

namespace tof::preprocess {

namespace {

constexpr std::size_t kB2 = 0, kB3 = 1, kB4 = 2, kB5 = 3, kB8 = 6, kB11 = 8;

void require_acquisition(const Acquisition& acq, const char* name) {
  require_rank(acq.bands, 3, name);
  if (acq.bands.dim(2) != kOpticalBands) throw ShapeError(name, "expected 10 bands");
  if (!acq.cloud_mask.empty() &&
      (acq.cloud_mask.rank() != 2 || acq.cloud_mask.dim(0) != acq.bands.dim(0) ||
       acq.cloud_mask.dim(1) != acq.bands.dim(1))) {
    throw ShapeError("cloud_mask", "extent differs from bands");
  }
}

double contaminated_fraction(const ByteArray& mask) {
  if (mask.empty()) return 0.0;
  const auto n = std::count_if(mask.values().begin(), mask.values().end(),
                               [](std::uint8_t v) { return v != 0; });
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

std::vector<int> grid_days(int spacing) {
  std::vector<int> days;
  for (int d = kFirstStepDay; d <= 365; d += spacing) days.push_back(d);
  return days;
}

/// Banded LL^T factor of I + lambda * D2^T D2 (half-bandwidth 2), reusable
/// across many right-hand sides of the same length.
class WhittakerSolver {
 public:
  WhittakerSolver(std::size_t n, double lambda) : n_(n), d_(n), e_(n, 0.0), f_(n, 0.0) {
    std::vector<double> a0(n, 1.0), a1(n, 0.0), a2(n, 0.0);
    constexpr std::array<double, 3> c = {1.0, -2.0, 1.0};
    for (std::size_t k = 0; k + 2 < n; ++k) {
      for (std::size_t p = 0; p < 3; ++p) {
        a0[k + p] += lambda * c[p] * c[p];
        if (p + 1 < 3) a1[k + p] += lambda * c[p] * c[p + 1];
        if (p + 2 < 3) a2[k + p] += lambda * c[p] * c[p + 2];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double em1 = i >= 1 ? e_[i - 1] : 0.0;
      const double fm2 = i >= 2 ? f_[i - 2] : 0.0;
      const double fm1 = i >= 1 ? f_[i - 1] : 0.0;
      d_[i] = std::sqrt(a0[i] - em1 * em1 - fm2 * fm2);
      if (i + 1 < n) e_[i] = (a1[i] - fm1 * em1) / d_[i];
      if (i + 2 < n) f_[i] = a2[i] / d_[i];
    }
  }

  void solve(std::span<const double> y, std::span<double> z) const {
    std::vector<double> w(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double s = y[i];
      if (i >= 1) s -= e_[i - 1] * w[i - 1];
      if (i >= 2) s -= f_[i - 2] * w[i - 2];
      w[i] = s / d_[i];
    }
    for (std::size_t k = n_; k-- > 0;) {
      double s = w[k];
      if (k + 1 < n_) s -= e_[k] * z[k + 1];
      if (k + 2 < n_) s -= f_[k] * z[k + 2];
      z[k] = s / d_[k];
    }
  }

 private:
  std::size_t n_;
  std::vector<double> d_;  // L(i, i)
  std::vector<double> e_;  // L(i+1, i)
  std::vector<double> f_;  // L(i+2, i)
};

void validate_whittaker(const WhittakerConfig& cfg) {
  if (!(cfg.lambda > 0.0) || !std::isfinite(cfg.lambda)) {
    throw ConfigError("Whittaker lambda must be positive, got " + std::to_string(cfg.lambda));
  }
  if (cfg.order != 2) throw ConfigError("Whittaker difference order must be 2");
}

}  // namespace

ByteArray fallback_cloud_mask(const FloatArray& bands, double b2_threshold) {
  require_rank(bands, 3, "bands");
  ByteArray mask({bands.dim(0), bands.dim(1)}, 0);
  for (std::size_t y = 0; y < bands.dim(0); ++y) {
    for (std::size_t x = 0; x < bands.dim(1); ++x) {
      mask(y, x) = bands(y, x, kB2) > b2_threshold ? 1 : 0;
    }
  }
  return mask;
}

ByteArray detect_shadows(const Acquisition& acq, const ShadowConfig& cfg) {
  require_acquisition(acq, "acquisition");
  const std::size_t h = acq.bands.dim(0);
  const std::size_t w = acq.bands.dim(1);
  ByteArray shadow({h, w}, 0);
  if (acq.cloud_mask.empty()) return shadow;
  const bool any_cloud = std::any_of(acq.cloud_mask.values().begin(),
                                     acq.cloud_mask.values().end(),
                                     [](std::uint8_t v) { return v != 0; });
  if (!any_cloud) return shadow;

  const Tensor dist = euclidean_distance_to(acq.cloud_mask);
  const double max_px = cfg.max_cloud_distance_m / kPixelMeters;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (acq.cloud_mask(y, x)) continue;
      const bool dark = acq.bands(y, x, kB8) < cfg.b8_threshold &&
                        acq.bands(y, x, kB11) < cfg.b11_threshold;
      if (dark && dist(y, x) <= max_px) shadow(y, x) = 1;
    }
  }
  return shadow;
}

Composite filter_and_composite(std::span<const Acquisition> acquisitions,
                               std::span<const ByteArray> contamination,
                               std::span<const int> target_days, double max_contamination) {
  if (contamination.size() != acquisitions.size()) {
    throw ShapeError("contamination", "expected one mask per acquisition");
  }
  if (target_days.empty()) throw ConfigError("no target days");
  if (acquisitions.empty()) throw DataError("no clean imagery");
  const std::size_t h = acquisitions[0].bands.dim(0);
  const std::size_t w = acquisitions[0].bands.dim(1);
  const std::size_t steps = target_days.size();

  Composite out;
  out.step_days.assign(target_days.begin(), target_days.end());
  out.bands = FloatArray({steps, h, w, static_cast<std::size_t>(kOpticalBands)}, 0.0f);
  out.missing = ByteArray({steps, h, w}, 1);
  out.source_day.assign(steps, -1);

  std::vector<int> winner(steps, -1);
  std::vector<double> winner_frac(steps, 0.0);
  std::vector<int> winner_dist(steps, 0);
  for (std::size_t i = 0; i < acquisitions.size(); ++i) {
    const auto& acq = acquisitions[i];
    require_acquisition(acq, "acquisition");
    if (acq.bands.dim(0) != h || acq.bands.dim(1) != w) {
      throw ShapeError("acquisition", "all acquisitions must share one extent");
    }
    if (acq.day_of_year < 1 || acq.day_of_year > 366) {
      throw DataError("day_of_year out of range: " + std::to_string(acq.day_of_year));
    }
    if (!contamination[i].empty()) require_shape(contamination[i], {h, w}, "contamination");
    const double frac = contaminated_fraction(contamination[i]);
    if (frac > max_contamination) {
      ++out.dropped;
      continue;
    }
    std::size_t best = 0;
    int best_dist = std::numeric_limits<int>::max();
    for (std::size_t s = 0; s < steps; ++s) {
      const int dist = std::abs(acq.day_of_year - target_days[s]);
      if (dist < best_dist) {
        best_dist = dist;
        best = s;
      }
    }
    const int cur = winner[best];
    const bool better = cur < 0 || frac < winner_frac[best] ||
                        (frac == winner_frac[best] && best_dist < winner_dist[best]);
    if (better) {
      winner[best] = static_cast<int>(i);
      winner_frac[best] = frac;
      winner_dist[best] = best_dist;
    }
  }
  if (out.dropped == acquisitions.size()) throw DataError("no clean imagery");

  for (std::size_t s = 0; s < steps; ++s) {
    if (winner[s] < 0) continue;
    const auto& acq = acquisitions[static_cast<std::size_t>(winner[s])];
    const auto& mask = contamination[static_cast<std::size_t>(winner[s])];
    out.source_day[s] = acq.day_of_year;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const bool bad = !mask.empty() && mask(y, x);
        out.missing(s, y, x) = bad ? 1 : 0;
        if (bad) continue;
        for (std::size_t b = 0; b < kOpticalBands; ++b) out.bands(s, y, x, b) = acq.bands(y, x, b);
      }
    }
  }
  return out;
}

Composite filter_and_composite(std::span<const Acquisition> acquisitions,
                               std::span<const ByteArray> contamination,
                               double max_contamination) {
  const auto days = step_days();
  return filter_and_composite(acquisitions, contamination, days, max_contamination);
}

FloatArray interpolate_gaps(const FloatArray& bands, const ByteArray& missing,
                            std::span<const int> days) {
  require_rank(bands, 4, "bands");
  const std::size_t steps = bands.dim(0);
  const std::size_t h = bands.dim(1);
  const std::size_t w = bands.dim(2);
  const std::size_t nb = bands.dim(3);
  require_shape(missing, {steps, h, w}, "missing");
  if (days.size() != steps) throw ShapeError("step_days", "expected one day per step");

  FloatArray out = bands;
  std::vector<std::size_t> clean;
  clean.reserve(steps);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      clean.clear();
      for (std::size_t s = 0; s < steps; ++s) {
        if (!missing(s, y, x)) clean.push_back(s);
      }
      if (clean.empty()) {
        throw DataError("pixel (" + std::to_string(y) + ", " + std::to_string(x) +
                        ") has no clean time steps");
      }
      if (clean.size() == steps) continue;
      std::size_t next = 0;  // index into `clean` of the first clean step >= s
      for (std::size_t s = 0; s < steps; ++s) {
        while (next < clean.size() && clean[next] < s) ++next;
        if (!missing(s, y, x)) continue;
        for (std::size_t b = 0; b < nb; ++b) {
          float v;
          if (next == 0) {
            v = bands(clean.front(), y, x, b);
          } else if (next == clean.size()) {
            v = bands(clean.back(), y, x, b);
          } else {
            const std::size_t lo = clean[next - 1];
            const std::size_t hi = clean[next];
            const double frac = static_cast<double>(days[s] - days[lo]) /
                                static_cast<double>(days[hi] - days[lo]);
            const double a = bands(lo, y, x, b);
            const double c = bands(hi, y, x, b);
            v = static_cast<float>(a + (c - a) * frac);
          }
          out(s, y, x, b) = v;
        }
      }
    }
  }
  return out;
}

std::vector<double> whittaker_smooth(std::span<const double> series, const WhittakerConfig& cfg) {
  validate_whittaker(cfg);
  if (!all_finite(series)) throw DataError("Whittaker input contains non-finite values");
  std::vector<double> z(series.size());
  if (series.size() < 3) {
    std::copy(series.begin(), series.end(), z.begin());
    return z;
  }
  WhittakerSolver(series.size(), cfg.lambda).solve(series, z);
  return z;
}

SpectralIndices spectral_indices(std::span<const float> b, EviVariant variant) {
  const double b2 = b[kB2], b3 = b[kB3], b4 = b[kB4], b5 = b[kB5], b8 = b[kB8];
  SpectralIndices out;
  const double evi_den =
      (variant == EviVariant::as_printed ? b5 : b8) + 6.0 * b4 - 7.5 * b2 + 1.0;
  out.evi = std::abs(evi_den) < 1e-12 ? 0.0 : 2.5 * (b8 - b4) / evi_den;
  const double lin = 2.0 * b8 + 1.0;
  const double radicand = std::max(0.0, lin * lin - 8.0 * (b8 - b4));
  out.msavi2 = (lin - std::sqrt(radicand)) / 2.0;
  const double bi_den = b2 + b4 + b3;
  out.bi = bi_den == 0.0 ? 0.0 : (b2 + b4 - b3) / bi_den;
  return out;
}

FloatArray compute_indices(const FloatArray& s2, EviVariant variant,
                           const NormalizationConfig& norm) {
  if (s2.rank() < 1 || s2.shape().back() != kOpticalBands) {
    throw ShapeError("s2", "last axis must hold 10 bands, got " + shape_to_string(s2.shape()));
  }
  Shape shape = s2.shape();
  shape.back() = kIndexBands;
  FloatArray out(shape);
  const std::size_t pixels = s2.size() / kOpticalBands;
  for (std::size_t i = 0; i < pixels; ++i) {
    const auto idx = spectral_indices(s2.values().subspan(i * kOpticalBands, kOpticalBands), variant);
    out[i * 3 + 0] = static_cast<float>(normalize_index(idx.evi, norm));
    out[i * 3 + 1] = static_cast<float>(normalize_index(idx.msavi2, norm));
    out[i * 3 + 2] = static_cast<float>(normalize_index(idx.bi, norm));
  }
  return out;
}

FloatArray median_filter_5x5(const FloatArray& grid) {
  require_rank(grid, 2, "dem");
  const auto h = static_cast<std::ptrdiff_t>(grid.dim(0));
  const auto w = static_cast<std::ptrdiff_t>(grid.dim(1));
  FloatArray out(grid.shape());
  std::array<float, 25> window{};
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      std::size_t k = 0;
      for (std::ptrdiff_t dy = -2; dy <= 2; ++dy) {
        for (std::ptrdiff_t dx = -2; dx <= 2; ++dx) {
          window[k++] = grid(detail::reflect_index(y + dy, h), detail::reflect_index(x + dx, w));
        }
      }
      std::nth_element(window.begin(), window.begin() + 12, window.end());
      out(y, x) = window[12];
    }
  }
  return out;
}

FloatArray compute_slope(const FloatArray& dem, double pixel_m) {
  require_rank(dem, 2, "dem");
  if (dem.dim(0) < 5 || dem.dim(1) < 5) {
    throw ShapeError("dem", "slope needs at least 5x5 pixels, got " + shape_to_string(dem.shape()));
  }
  if (!all_finite(dem.values())) throw DataError("DEM contains non-finite values");
  const FloatArray z = median_filter_5x5(dem);
  const auto h = static_cast<std::ptrdiff_t>(dem.dim(0));
  const auto w = static_cast<std::ptrdiff_t>(dem.dim(1));
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
    return z(detail::reflect_index(y, h), detail::reflect_index(x, w));
  };
  FloatArray out(dem.shape());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const double a = at(y - 1, x - 1), b = at(y - 1, x), c = at(y - 1, x + 1);
      const double d = at(y, x - 1), f = at(y, x + 1);
      const double g = at(y + 1, x - 1), hh = at(y + 1, x), i = at(y + 1, x + 1);
      const double dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8.0 * pixel_m);
      const double dzdy = ((g + 2 * hh + i) - (a + 2 * b + c)) / (8.0 * pixel_m);
      out(y, x) = static_cast<float>(100.0 * std::sqrt(dzdx * dzdx + dzdy * dzdy));
    }
  }
  return out;
}

FloatArray fuse_s1(std::span<const int> days, std::span<const RadarAcquisition> acquisitions) {
  if (acquisitions.empty()) throw DataError("no radar acquisitions to fuse");
  const auto& first = acquisitions.front().bands;
  require_rank(first, 3, "s1");
  if (first.dim(2) != kRadarBands) throw ShapeError("s1", "expected 2 bands (VV, VH)");
  for (const auto& acq : acquisitions) require_shape(acq.bands, first.shape(), "s1");
  const std::size_t h = first.dim(0);
  const std::size_t w = first.dim(1);
  const std::size_t frame = h * w * kRadarBands;
  FloatArray out({days.size(), h, w, static_cast<std::size_t>(kRadarBands)});
  for (std::size_t s = 0; s < days.size(); ++s) {
    const RadarAcquisition* best = nullptr;
    for (const auto& acq : acquisitions) {
      if (!best) {
        best = &acq;
        continue;
      }
      const int d_new = std::abs(acq.day_of_year - days[s]);
      const int d_best = std::abs(best->day_of_year - days[s]);
      if (d_new < d_best || (d_new == d_best && acq.day_of_year < best->day_of_year)) best = &acq;
    }
    std::copy(best->bands.data(), best->bands.data() + frame, out.data() + s * frame);
  }
  return out;
}

FloatArray upsample_bilinear(const FloatArray& src, std::size_t out_h, std::size_t out_w) {
  require_rank(src, 3, "upsample source");
  const std::size_t h = src.dim(0), w = src.dim(1), c = src.dim(2);
  FloatArray out({out_h, out_w, c});
  auto coord = [](std::size_t i, std::size_t n_in, std::size_t n_out) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) /
                         static_cast<double>(n_out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n_in - 1));
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = coord(y, h, out_h);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = coord(x, w, out_w);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double top = src(y0, x0, k) * (1 - fx) + src(y0, x1, k) * fx;
        const double bot = src(y1, x0, k) * (1 - fx) + src(y1, x1, k) * fx;
        out(y, x, k) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

Tensor reconstruct_optical(std::span<const Acquisition> acquisitions, const PreprocessConfig& cfg,
                           PreprocessReport* report) {
  validate_whittaker(cfg.whittaker);
  if (cfg.grid_spacing_days <= 0 || kStepSpacingDays % cfg.grid_spacing_days != 0) {
    throw ConfigError("grid spacing must divide 15 days");
  }
  if (acquisitions.empty()) throw DataError("no clean imagery");

  std::vector<Acquisition> acqs(acquisitions.begin(), acquisitions.end());
  std::vector<ByteArray> contamination;
  contamination.reserve(acqs.size());
  for (auto& acq : acqs) {
    require_acquisition(acq, "acquisition");
    if (acq.cloud_mask.empty()) acq.cloud_mask = fallback_cloud_mask(acq.bands, cfg.fallback_cloud_b2);
    ByteArray mask = detect_shadows(acq, cfg.shadow);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] | acq.cloud_mask[i];
    contamination.push_back(std::move(mask));
  }

  const auto grid = grid_days(cfg.grid_spacing_days);
  const Composite comp = filter_and_composite(acqs, contamination, grid, cfg.max_contamination);
  const FloatArray filled = interpolate_gaps(comp.bands, comp.missing, grid);

  const std::size_t n = grid.size();
  const std::size_t h = filled.dim(1);
  const std::size_t w = filled.dim(2);
  const std::size_t ratio = static_cast<std::size_t>(kStepSpacingDays / cfg.grid_spacing_days);
  const WhittakerSolver solver(n, cfg.whittaker.lambda);

  Tensor out({static_cast<std::size_t>(kTimeSteps), h, w, static_cast<std::size_t>(kOpticalBands)});
  std::vector<double> series(n), smooth(n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t b = 0; b < kOpticalBands; ++b) {
        for (std::size_t s = 0; s < n; ++s) series[s] = filled(s, y, x, b);
        if (n >= 3) {
          solver.solve(series, smooth);
        } else {
          smooth = series;
        }
        for (std::size_t t = 0; t < static_cast<std::size_t>(kTimeSteps); ++t) {
          out(t, y, x, b) = smooth[t * ratio];
        }
      }
    }
  }

  if (report) {
    report->acquisitions = acquisitions.size();
    report->dropped = comp.dropped;
    const auto miss = std::count(comp.missing.values().begin(), comp.missing.values().end(), 1);
    report->missing_fraction = static_cast<double>(miss) / static_cast<double>(comp.missing.size());
  }
  return out;
}

PreprocessResult preprocess_scene(const RawScene& scene, const PreprocessConfig& cfg) {
  PreprocessReport report;
  const Tensor optical = reconstruct_optical(scene.optical, cfg, &report);
  report.upsampled_20m = scene.upsampled_20m;
  const std::size_t h = optical.dim(1);
  const std::size_t w = optical.dim(2);

  FloatArray s2(optical.shape());
  for (std::size_t i = 0; i < optical.size(); ++i) {
    s2[i] = static_cast<float>(std::clamp(optical[i], 0.0, 1.0));
  }
  const FloatArray indices = compute_indices(s2, cfg.evi, cfg.normalization);

  require_shape(scene.dem, {h, w}, "dem");
  const FloatArray slope = normalize_slope_grid(compute_slope(scene.dem), cfg.normalization);

  const auto days = step_days();
  const FloatArray s1 = fuse_s1(days, scene.radar);
  if (s1.dim(1) != h || s1.dim(2) != w) throw ShapeError("s1", "extent differs from optical");

  return {build_stack(s2, s1, indices, slope, days, scene.plot_id), report};
}

}  // namespace tof::preprocess
