#include "tof/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tof::synth {

namespace {

constexpr double kPi = std::numbers::pi;

/// Smooth season bump in [0, 1]: zero outside [60, 300], peak at day 180.
double tree_season(double day) {
  if (day < 60.0 || day > 300.0) return 0.0;
  return std::sin(kPi * (day - 60.0) / 240.0);
}

double gaussian_bump(double day, double peak, double width) {
  const double z = (day - peak) / width;
  return std::exp(-z * z);
}

struct Phenology {
  Background type = Background::grass;
  double base = 0.2;
  double amplitude = 0.0;
  double peak = 180.0;
  double width = 30.0;

  double at(double day) const {
    switch (type) {
      case Background::cropland:
      case Background::grass: return base + amplitude * gaussian_bump(day, peak, width);
      case Background::bare: return base + amplitude * std::sin(2.0 * kPi * (day - peak) / 365.0);
    }
    return base;
  }
  double annual_mean() const {
    double s = 0.0;
    for (int d = 1; d <= 365; ++d) s += at(d) - base;
    return base + s / 365.0;
  }
};

/// Normalized reflectance of the ten optical bands for greenness g and soil brightness s.
std::array<double, kOpticalBands> spectrum(double g, double s) {
  return {0.05 + 0.6 * s + 0.04 * (1.0 - g), 0.07 + 0.6 * s + 0.05 * (1.0 - g),
          0.06 + 0.8 * s + 0.10 * (1.0 - g), 0.10 + 0.6 * s + 0.12 * g,
          0.13 + 0.5 * s + 0.30 * g,         0.14 + 0.5 * s + 0.38 * g,
          0.15 + 0.5 * s + 0.45 * g,         0.16 + 0.5 * s + 0.45 * g,
          0.20 + 0.9 * s - 0.08 * g,         0.14 + 0.9 * s - 0.08 * g};
}

std::vector<std::pair<int, int>> disk(int radius) {
  std::vector<std::pair<int, int>> out;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
    }
  }
  return out;
}

}  // namespace

std::string_view background_name(Background b) {
  switch (b) {
    case Background::cropland: return "cropland";
    case Background::grass: return "grass";
    case Background::bare: return "bare";
  }
  return "grass";
}

void SynthConfig::validate() const {
  if (!(cover_target >= 0.0 && cover_target <= 1.0)) throw ConfigError("cover_target must lie in [0, 1]");
  if (radius_min < 1 || radius_max < radius_min) throw ConfigError("need 1 <= radius_min <= radius_max");
  if (!(cloud_gap_fraction >= 0.0 && cloud_gap_fraction <= 0.75)) {
    throw ConfigError("cloud_gap_fraction must lie in [0, 0.75]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (size < kPlotSize) throw ConfigError("plot size must be >= 14");
  if (acquisition_spacing_days < 1 || radar_spacing_days < 1) throw ConfigError("spacings must be >= 1 day");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

ByteArray place_trees(const SynthConfig& cfg, Rng& rng) {
  const auto n = static_cast<std::size_t>(cfg.size);
  const int size = cfg.size;
  const double cells = static_cast<double>(n * n);
  const auto target = static_cast<long>(std::lround(cfg.cover_target * cells));
  ByteArray mask({n, n});
  if (target == 0) return mask;

  struct Candidate {
    int y, x, r;
  };
  std::vector<Candidate> candidates;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int r = cfg.radius_min; r <= cfg.radius_max; ++r) candidates.push_back({y, x, r});
    }
  }
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    mask.fill(0);
    long covered = 0;
    rng.shuffle(candidates);
    for (const auto& c : candidates) {
      if (covered >= target) break;
      std::vector<std::size_t> cells_hit;
      bool overlap = false;
      for (auto [dy, dx] : disk(c.r)) {
        const int y = c.y + dy, x = c.x + dx;
        if (y < 0 || y >= size || x < 0 || x >= size) continue;
        const std::size_t i = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
        if (mask[i]) {
          overlap = true;
          break;
        }
        cells_hit.push_back(i);
      }
      if (overlap) continue;
      const long after = covered + static_cast<long>(cells_hit.size());
      if (std::abs(after - target) >= std::abs(covered - target)) continue;
      for (auto i : cells_hit) mask[i] = 1;
      covered = after;
    }
    if (std::abs(static_cast<double>(covered - target)) <= 0.1 * cells) return mask;
  }
  throw DataError("cover target " + std::to_string(cfg.cover_target) + " is infeasible with radius " +
                  std::to_string(cfg.radius_min) + "-" + std::to_string(cfg.radius_max) +
                  " non-overlapping trees after " + std::to_string(cfg.max_attempts) + " attempts");
}

SynthPlot generate_plot(const SynthConfig& cfg, const preprocess::PreprocessConfig& pre) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.size);
  Rng tree_rng(derive_seed(cfg.seed, {1}));
  const ByteArray trees = place_trees(cfg, tree_rng);
  Rng rng(derive_seed(cfg.seed, {2}));

  // Plot-level phenology.
  const Background type = cfg.background.value_or(static_cast<Background>(rng.below(3)));
  const double tree_base = rng.uniform(0.30, 0.45);
  const double tree_amp = 2.0 * cfg.tree_nir_amplitude * rng.uniform(0.8, 1.2);
  const double tree_mean = tree_base + tree_amp * 240.0 * 2.0 / kPi / 365.0;
  Phenology bg;
  bg.type = type;
  switch (type) {
    case Background::cropland:
      bg.amplitude = rng.uniform(0.35, 0.55);
      bg.peak = rng.uniform(120.0, 260.0);
      bg.width = rng.uniform(20.0, 35.0);
      break;
    case Background::grass:
      bg.amplitude = rng.uniform(0.10, 0.20);
      bg.peak = rng.uniform(80.0, 150.0);
      bg.width = rng.uniform(45.0, 60.0);
      break;
    case Background::bare:
      bg.amplitude = rng.uniform(0.01, 0.03);
      bg.peak = rng.uniform(1.0, 365.0);
      break;
  }
  bg.base = 0.0;
  const double bg_shape_mean = bg.annual_mean();
  bg.base = std::max(0.02, tree_mean - rng.uniform(-0.04, 0.08) - bg_shape_mean);
  const double soil = type == Background::bare ? rng.uniform(0.05, 0.12) : rng.uniform(0.0, 0.06);

  std::vector<double> texture(n * n);
  for (auto& t : texture) t = rng.normal(0.0, 0.02);

  auto greenness = [&](std::size_t i, double day) {
    const double g = trees[i] ? tree_base + tree_amp * tree_season(day) : bg.at(day);
    return std::clamp(g + texture[i], 0.0, 1.0);
  };

  SynthPlot out{PlotSample(TimeSeriesStack(FloatArray({24, n, n, 16}), step_days(), "tmp"), LabelGrid(trees)),
                {}, Tensor(), type};
  auto& raw = out.raw;
  raw.plot_id = cfg.plot_id.empty() ? "synth_" + std::to_string(cfg.seed) : cfg.plot_id;
  raw.label = LabelGrid(trees);

  // Optical acquisitions with noise, clouds and shadows.
  // Cloudy spells: a two-state chain with mean run length 3 whose stationary
  // cloudy fraction is cloud_gap_fraction.
  Rng cloud_rng(derive_seed(cfg.seed, {3}));
  const double stay_cloudy = 2.0 / 3.0;
  const double become_cloudy =
      cfg.cloud_gap_fraction >= 1.0 ? 1.0 : std::min(1.0, cfg.cloud_gap_fraction / (1.0 - cfg.cloud_gap_fraction) / 3.0);
  bool cloudy = cloud_rng.bernoulli(cfg.cloud_gap_fraction);
  for (int day = 1; day <= 365; day += cfg.acquisition_spacing_days) {
    preprocess::Acquisition acq;
    acq.day_of_year = day;
    acq.bands = FloatArray({n, n, static_cast<std::size_t>(kOpticalBands)});
    acq.cloud_mask = ByteArray({n, n});
    for (std::size_t i = 0; i < n * n; ++i) {
      const auto spec = spectrum(greenness(i, day), soil);
      for (std::size_t b = 0; b < spec.size(); ++b) {
        acq.bands[i * kOpticalBands + b] =
            static_cast<float>(std::clamp(spec[b] + rng.normal(0.0, cfg.noise_sigma), 0.0, 1.0));
      }
    }
    if (day > 1) cloudy = cloud_rng.bernoulli(cloudy ? stay_cloudy : become_cloudy);
    if (cloudy) {
      const bool full = cloud_rng.bernoulli(0.4);
      const double cy = cloud_rng.uniform(0.0, static_cast<double>(n));
      const double cx = cloud_rng.uniform(0.0, static_cast<double>(n));
      const double radius = cloud_rng.uniform(2.0, 7.0);
      const int sy = 2 + static_cast<int>(cloud_rng.below(3)), sx = 1 + static_cast<int>(cloud_rng.below(3));
      auto in_cloud = [&](double y, double x) {
        return full || (y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius;
      };
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const std::size_t i = y * n + x;
          float* px = acq.bands.data() + i * kOpticalBands;
          const auto fy = static_cast<double>(y), fx = static_cast<double>(x);
          if (in_cloud(fy, fx)) {
            acq.cloud_mask[i] = 1;
            for (std::size_t b = 0; b < kOpticalBands; ++b) {
              px[b] = static_cast<float>(std::clamp(0.45 + 0.05 * cloud_rng.uniform(), 0.0, 1.0));
            }
          } else if (!full && in_cloud(fy - sy, fx - sx)) {
            for (std::size_t b = 0; b < kOpticalBands; ++b) px[b] = static_cast<float>(px[b] * 0.15);
          }
        }
      }
    }
    raw.optical.push_back(std::move(acq));
  }

  // Radar: trees have a steadier return; their annual mean matches the
  // background's up to a small plot-level offset.
  const double vv_mean = rng.uniform(-16.0, -10.0);
  const double season_db = type == Background::cropland ? 3.0 : type == Background::grass ? 1.5 : 0.5;
  const double radar_width = std::max(bg.width, 30.0);
  double bump_mean = 0.0;
  int radar_days = 0;
  for (int day = 3; day <= 365; day += cfg.radar_spacing_days, ++radar_days) {
    bump_mean += gaussian_bump(day, bg.peak, radar_width);
  }
  bump_mean /= radar_days;
  const double tree_vv = vv_mean + season_db * bump_mean + rng.uniform(-1.0, 1.0);
  for (int day = 3; day <= 365; day += cfg.radar_spacing_days) {
    preprocess::RadarAcquisition acq;
    acq.day_of_year = day;
    acq.bands = FloatArray({n, n, static_cast<std::size_t>(kRadarBands)});
    for (std::size_t i = 0; i < n * n; ++i) {
      double vv, vh;
      if (trees[i]) {
        vv = tree_vv + rng.normal(0.0, 0.5);
        vh = vv - 6.5 + rng.normal(0.0, 0.3);
      } else {
        vv = vv_mean + season_db * gaussian_bump(day, bg.peak, radar_width) + rng.normal(0.0, 1.5);
        vh = vv - 6.5 + rng.normal(0.0, 1.0);
      }
      acq.bands[i * 2] = static_cast<float>(normalize_backscatter(vv));
      acq.bands[i * 2 + 1] = static_cast<float>(normalize_backscatter(vh));
    }
    raw.radar.push_back(std::move(acq));
  }

  // Terrain: a tilted plane with centimeter-scale noise.
  const double gy = rng.uniform(-0.15, 0.15), gx = rng.uniform(-0.15, 0.15);
  raw.dem = FloatArray({n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      raw.dem(y, x) = static_cast<float>(100.0 + kPixelMeters * (gy * static_cast<double>(y) + gx * static_cast<double>(x)) +
                                         rng.normal(0.0, 0.3));
    }
  }

  out.clean_optical = Tensor({24, n, n, static_cast<std::size_t>(kOpticalBands)});
  const auto days = step_days();
  for (std::size_t t = 0; t < days.size(); ++t) {
    for (std::size_t i = 0; i < n * n; ++i) {
      const double day = days[t];
      const double g = std::clamp((trees[i] ? tree_base + tree_amp * tree_season(day) : bg.at(day)) + texture[i], 0.0, 1.0);
      const auto spec = spectrum(g, soil);
      for (std::size_t b = 0; b < spec.size(); ++b) out.clean_optical[(t * n * n + i) * kOpticalBands + b] = spec[b];
    }
  }

  auto result = preprocess::preprocess_scene(raw, pre);
  out.sample = PlotSample(std::move(result.stack), LabelGrid(trees));
  return out;
}

CoverMix cover_mix_from_name(std::string_view name) {
  if (name == "uniform") return CoverMix::uniform;
  if (name == "low") return CoverMix::low;
  if (name == "high") return CoverMix::high;
  throw ConfigError("unknown cover mix '" + std::string(name) + "' (expected uniform, low or high)");
}

std::vector<SynthPlot> generate_dataset(const DatasetConfig& cfg, const preprocess::PreprocessConfig& pre) {
  std::vector<SynthPlot> out;
  out.reserve(cfg.count);
  Rng rng(derive_seed(cfg.seed, {0xC0FE}));
  for (std::size_t i = 0; i < cfg.count; ++i) {
    SynthConfig sc;
    sc.seed = derive_seed(cfg.seed, {i});
    switch (cfg.mix) {
      case CoverMix::uniform: sc.cover_target = rng.uniform(0.0, 0.7); break;
      case CoverMix::low: sc.cover_target = rng.uniform(0.0, 0.18); break;
      case CoverMix::high: sc.cover_target = rng.uniform(0.3, 0.7); break;
    }
    sc.cloud_gap_fraction = cfg.cloud_gap_fraction;
    sc.noise_sigma = cfg.noise_sigma;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04zu", cfg.id_prefix.c_str(), i);
    sc.plot_id = id;
    out.push_back(generate_plot(sc, pre));
  }
  return out;
}

}  // namespace tof::synth
