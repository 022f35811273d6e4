#pragma once

// Raw acquisitions -> clean 24-step stacks.
//
// Pipeline: cloud masks (external, or a B2 brightness fallback) + shadow
// detection -> drop acquisitions with > 25% contamination -> composite onto a
// regular day grid -> linear gap interpolation -> Whittaker smoothing of the
// optical bands -> sample the 24 15-day steps -> indices, slope and nearest
// radar acquisition -> TimeSeriesStack.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tof/raster.hpp"

namespace tof::preprocess {

/// One optical acquisition. Bands are normalized reflectance [H, W, 10].
struct Acquisition {
  int day_of_year = 1;
  FloatArray bands;
  ByteArray cloud_mask;  // [H, W], 1 = cloud
};

/// One radar acquisition. Bands are normalized VV/VH [H, W, 2].
struct RadarAcquisition {
  int day_of_year = 1;
  FloatArray bands;
};

struct WhittakerConfig {
  double lambda = 800.0;
  int order = 2;
};

struct ShadowConfig {
  double b8_threshold = 0.12;
  double b11_threshold = 0.10;
  double max_cloud_distance_m = 800.0;
};

enum class EviVariant {
  as_printed,  // B5 in the denominator
  standard,    // B8 in the denominator
};

struct PreprocessConfig {
  WhittakerConfig whittaker;
  ShadowConfig shadow;
  double max_contamination = 0.25;
  int grid_spacing_days = 5;  // must divide 15
  double fallback_cloud_b2 = 0.25;
  EviVariant evi = EviVariant::as_printed;
  NormalizationConfig normalization;
};

/// Dark B8/B11 pixels within `max_cloud_distance_m` of a cloud pixel. Cloud
/// pixels themselves are never flagged as shadow.
ByteArray detect_shadows(const Acquisition& acq, const ShadowConfig& cfg = {});

/// Cloud mask from B2 brightness, for acquisitions without an external mask.
ByteArray fallback_cloud_mask(const FloatArray& bands, double b2_threshold = 0.25);

struct Composite {
  std::vector<int> step_days;  // target day of each step
  FloatArray bands;            // [S, H, W, 10]
  ByteArray missing;           // [S, H, W]
  std::vector<int> source_day; // acquisition day per step, -1 when none
  std::size_t dropped = 0;     // acquisitions removed for contamination
};

/// Drops acquisitions whose contaminated fraction exceeds `max_contamination`
/// and assigns each survivor to its nearest target day (least contaminated
/// wins a contested step). `contamination[i]` flags cloud or shadow pixels of
/// `acquisitions[i]`. Throws DataError("no clean imagery") when nothing
/// survives.
Composite filter_and_composite(std::span<const Acquisition> acquisitions,
                               std::span<const ByteArray> contamination,
                               std::span<const int> target_days, double max_contamination = 0.25);

/// Convenience overload targeting the 24 standard steps.
Composite filter_and_composite(std::span<const Acquisition> acquisitions,
                               std::span<const ByteArray> contamination,
                               double max_contamination = 0.25);

/// Fills missing values by linear interpolation in day-of-year between the
/// nearest clean steps; leading and trailing gaps take the nearest clean value.
FloatArray interpolate_gaps(const FloatArray& bands, const ByteArray& missing,
                            std::span<const int> step_days);

/// argmin_z ||z - y||^2 + lambda ||D2 z||^2, via a banded Cholesky solve.
std::vector<double> whittaker_smooth(std::span<const double> series,
                                     const WhittakerConfig& cfg = {});

/// Raw EVI, MSAVI2, BI for one pixel (normalized reflectances, band order B2..B12).
struct SpectralIndices {
  double evi = 0.0;
  double msavi2 = 0.0;
  double bi = 0.0;
};
SpectralIndices spectral_indices(std::span<const float> bands,
                                 EviVariant variant = EviVariant::as_printed);

/// [..., 10] -> [..., 3] network-ready indices (clamped to [-1.5, 1.5] and
/// mapped to [0, 1]).
FloatArray compute_indices(const FloatArray& s2, EviVariant variant = EviVariant::as_printed,
                           const NormalizationConfig& norm = {});

/// Slope in percent from a DEM in meters: 5x5 median filter, then Horn's
/// gradient at `pixel_m` spacing. Both stages use reflect padding.
FloatArray compute_slope(const FloatArray& dem, double pixel_m = kPixelMeters);

/// 5x5 median filter with reflect padding.
FloatArray median_filter_5x5(const FloatArray& grid);

/// Nearest radar acquisition per step day; ties go to the earlier acquisition.
FloatArray fuse_s1(std::span<const int> step_days, std::span<const RadarAcquisition> acquisitions);

/// Bilinear resampling of [h, w, C] to [H, W, C] (pixel-center aligned).
FloatArray upsample_bilinear(const FloatArray& src, std::size_t out_h, std::size_t out_w);

struct RawScene {
  std::string plot_id;
  double lat = 0.0;
  double lon = 0.0;
  std::vector<Acquisition> optical;
  std::vector<RadarAcquisition> radar;
  FloatArray dem;  // meters [H, W]
  std::optional<LabelGrid> label;
  bool upsampled_20m = false;
};

struct PreprocessReport {
  std::size_t acquisitions = 0;
  std::size_t dropped = 0;
  double missing_fraction = 0.0;  // over the compositing grid, before interpolation
  bool upsampled_20m = false;
};

/// Cloud-free optical series at the 24 standard steps, [24, H, W, 10],
/// before any clamping. Exposed for reconstruction checks.
Tensor reconstruct_optical(std::span<const Acquisition> acquisitions, const PreprocessConfig& cfg,
                           PreprocessReport* report = nullptr);

struct PreprocessResult {
  TimeSeriesStack stack;
  PreprocessReport report;
};

PreprocessResult preprocess_scene(const RawScene& scene, const PreprocessConfig& cfg = {});

}  // namespace tof::preprocess
