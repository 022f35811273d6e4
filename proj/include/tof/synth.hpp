#pragma once

// Synthetic Sentinel-like plots with known tree masks. Trees are disks with
// a stable, elevated NIR signal and a mid-season peak; backgrounds have
// their own seasonal signature, with per-plot brightness chosen so that a
// pixel's temporal mean alone is a weak tree indicator. Raw acquisitions
// carry noise, clouds and shadows and are run through the preprocessing
// pipeline to produce the plot's stack.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tof/preprocess.hpp"
#include "tof/random.hpp"
#include "tof/raster.hpp"

namespace tof::synth {

enum class Background { cropland, grass, bare };

std::string_view background_name(Background b);

struct SynthConfig {
  std::uint64_t seed = 0;
  double cover_target = 0.3;
  int radius_min = 1;
  int radius_max = 2;
  double tree_nir_amplitude = 0.08;
  std::optional<Background> background;  // drawn from the seed when unset
  double cloud_gap_fraction = 0.3;
  double noise_sigma = 0.01;
  int size = kPlotSize;
  int acquisition_spacing_days = 5;
  int radar_spacing_days = 12;
  int max_attempts = 20;
  std::string plot_id;

  void validate() const;
};

struct SynthPlot {
  PlotSample sample;
  preprocess::RawScene raw;
  /// Noise- and cloud-free optical reflectance at the 24 step days, [24, H, W, 10].
  Tensor clean_optical;
  Background background = Background::grass;
};

/// Throws DataError when the cover target cannot be met within the retry budget.
SynthPlot generate_plot(const SynthConfig& cfg,
                        const preprocess::PreprocessConfig& pre = {});

/// Tree mask only: non-overlapping disks placed until the cover target is
/// reached, realized cover within 0.1 of the target.
ByteArray place_trees(const SynthConfig& cfg, Rng& rng);

enum class CoverMix { uniform, low, high };
CoverMix cover_mix_from_name(std::string_view name);

struct DatasetConfig {
  std::size_t count = 200;
  CoverMix mix = CoverMix::uniform;
  std::uint64_t seed = 0;
  double cloud_gap_fraction = 0.3;
  double noise_sigma = 0.01;
  std::string id_prefix = "plot";
};

/// Cover targets: uniform over [0, 0.7], low over [0, 0.18], high over [0.3, 0.7].
std::vector<SynthPlot> generate_dataset(const DatasetConfig& cfg,
                                        const preprocess::PreprocessConfig& pre = {});

}  // namespace tof::synth
