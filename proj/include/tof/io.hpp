#pragma once

// File formats: little-endian float32 arrays, 0/1 CSV grids and the plot
// bundle directory (meta.json, s2.bin, s1.bin, dem.bin, indices.bin, labels.csv).
// dem.bin holds the normalized slope grid; indices.bin is optional on read.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tof/raster.hpp"

namespace tof::io {

namespace fs = std::filesystem;
using nlohmann::json;

void write_f32(const fs::path& path, std::span<const float> values);
std::vector<float> read_f32(const fs::path& path);
void write_f64(const fs::path& path, std::span<const double> values);
std::vector<double> read_f64(const fs::path& path);

FloatArray read_array_f32(const fs::path& path, const Shape& shape);
void write_array_f32(const fs::path& path, const FloatArray& a);

/// H rows of W comma-separated 0/1 values.
ByteArray read_binary_csv(const fs::path& path);
void write_binary_csv(const fs::path& path, const ByteArray& grid);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
void write_text(const fs::path& path, const std::string& text);

struct PlotBundle {
  TimeSeriesStack stack;
  std::optional<LabelGrid> label;
  double lat = 0.0;
  double lon = 0.0;
  json extra_meta = json::object();
};

void write_plot_bundle(const fs::path& dir, const PlotBundle& bundle);
PlotBundle read_plot_bundle(const fs::path& dir);

/// `dir` itself when it holds a meta.json, otherwise its immediate
/// subdirectories that do, sorted by name.
std::vector<fs::path> list_bundles(const fs::path& dir);

/// Requires both stack and label.
PlotSample load_plot_sample(const fs::path& dir);
std::vector<PlotSample> load_dataset(const fs::path& dir);

}  // namespace tof::io
