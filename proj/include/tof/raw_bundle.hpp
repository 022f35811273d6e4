#pragma once

// Raw bundle: the preprocessing input directory.
//
//   meta.json           plot_id, lat, lon, H, W, s2_days, s1_days, s2_layout
//   s2_<day>.bin        float32 reflectance 0-10000, [H][W][10]   (layout "10m")
//                       or [H][W][4] B2,B3,B4,B8 plus
//   s2_20m_<day>.bin    [ceil(H/2)][ceil(W/2)][6] B5,B6,B7,B8A,B11,B12 (layout "split")
//   cloud_<day>.csv     optional 0/1 cloud mask; B2 > 0.25 fallback when absent
//   s1_<day>.bin        float32 backscatter in dB, [H][W][2] VV,VH
//   dem.bin             float32 elevation in meters, [H][W]
//   labels.csv          optional 0/1 labels, copied through

#include <filesystem>

#include "tof/preprocess.hpp"

namespace tof::preprocess {

RawScene read_raw_bundle(const std::filesystem::path& dir, const NormalizationConfig& norm = {});

/// Writes the "10m" layout. Scene bands are normalized and are converted
/// back to sensor units on disk.
void write_raw_bundle(const std::filesystem::path& dir, const RawScene& scene,
                      const NormalizationConfig& norm = {});

}  // namespace tof::preprocess
