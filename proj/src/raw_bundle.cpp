#include "tof/raw_bundle.hpp"

#include "tof/io.hpp"

namespace tof::preprocess {

namespace fs = std::filesystem;

namespace {

std::string day_file(const char* prefix, int day, const char* ext) {
  return std::string(prefix) + std::to_string(day) + ext;
}

}  // namespace

RawScene read_raw_bundle(const fs::path& dir, const NormalizationConfig& norm) {
  if (!fs::is_directory(dir)) throw IoError("raw bundle not found: " + dir.string());
  const auto meta = io::read_json(dir / "meta.json");
  const auto h = meta.at("H").get<std::size_t>();
  const auto w = meta.at("W").get<std::size_t>();
  const std::string layout = meta.value("s2_layout", "10m");
  if (layout != "10m" && layout != "split") {
    throw IoError(dir.string() + ": unknown s2_layout '" + layout + "'");
  }

  RawScene scene;
  scene.plot_id = meta.value("plot_id", dir.filename().string());
  scene.lat = meta.value("lat", 0.0);
  scene.lon = meta.value("lon", 0.0);
  scene.upsampled_20m = layout == "split";

  for (int day : meta.at("s2_days").get<std::vector<int>>()) {
    Acquisition acq;
    acq.day_of_year = day;
    if (layout == "10m") {
      acq.bands = normalize_s2(
          io::read_array_f32(dir / day_file("s2_", day, ".bin"), {h, w, kOpticalBands}), norm);
    } else {
      const auto fine = normalize_s2(io::read_array_f32(dir / day_file("s2_", day, ".bin"), {h, w, 4}), norm);
      const std::size_t ch = (h + 1) / 2, cw = (w + 1) / 2;
      const auto coarse = upsample_bilinear(
          normalize_s2(io::read_array_f32(dir / day_file("s2_20m_", day, ".bin"), {ch, cw, 6}), norm),
          h, w);
      // B2 B3 B4 | B5 B6 B7 | B8 | B8A B11 B12
      constexpr std::size_t fine_to[4] = {0, 1, 2, 6};
      constexpr std::size_t coarse_to[6] = {3, 4, 5, 7, 8, 9};
      acq.bands = FloatArray({h, w, static_cast<std::size_t>(kOpticalBands)});
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          for (std::size_t k = 0; k < 4; ++k) acq.bands(y, x, fine_to[k]) = fine(y, x, k);
          for (std::size_t k = 0; k < 6; ++k) acq.bands(y, x, coarse_to[k]) = coarse(y, x, k);
        }
      }
    }
    const auto cloud_path = dir / day_file("cloud_", day, ".csv");
    if (fs::exists(cloud_path)) {
      acq.cloud_mask = io::read_binary_csv(cloud_path);
      require_shape(acq.cloud_mask, {h, w}, cloud_path.filename().string());
    }
    scene.optical.push_back(std::move(acq));
  }
  for (int day : meta.at("s1_days").get<std::vector<int>>()) {
    scene.radar.push_back(
        {day, normalize_s1(io::read_array_f32(dir / day_file("s1_", day, ".bin"), {h, w, kRadarBands}),
                           norm)});
  }
  scene.dem = io::read_array_f32(dir / "dem.bin", {h, w});
  if (fs::exists(dir / "labels.csv")) scene.label = LabelGrid(io::read_binary_csv(dir / "labels.csv"));
  return scene;
}

void write_raw_bundle(const fs::path& dir, const RawScene& scene, const NormalizationConfig& norm) {
  if (scene.optical.empty()) throw DataError("raw scene has no optical acquisitions");
  fs::create_directories(dir);
  const std::size_t h = scene.dem.dim(0);
  const std::size_t w = scene.dem.dim(1);

  std::vector<int> s2_days;
  for (const auto& acq : scene.optical) {
    require_shape(acq.bands, {h, w, kOpticalBands}, "acquisition");
    FloatArray raw(acq.bands.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = static_cast<float>(denormalize_reflectance(acq.bands[i], norm));
    }
    io::write_array_f32(dir / day_file("s2_", acq.day_of_year, ".bin"), raw);
    if (!acq.cloud_mask.empty()) {
      io::write_binary_csv(dir / day_file("cloud_", acq.day_of_year, ".csv"), acq.cloud_mask);
    }
    s2_days.push_back(acq.day_of_year);
  }
  std::vector<int> s1_days;
  for (const auto& acq : scene.radar) {
    require_shape(acq.bands, {h, w, kRadarBands}, "s1");
    FloatArray raw(acq.bands.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = static_cast<float>(denormalize_backscatter(acq.bands[i], norm));
    }
    io::write_array_f32(dir / day_file("s1_", acq.day_of_year, ".bin"), raw);
    s1_days.push_back(acq.day_of_year);
  }
  io::write_array_f32(dir / "dem.bin", scene.dem);
  if (scene.label) io::write_binary_csv(dir / "labels.csv", scene.label->values());

  io::json meta;
  meta["plot_id"] = scene.plot_id;
  meta["lat"] = scene.lat;
  meta["lon"] = scene.lon;
  meta["H"] = h;
  meta["W"] = w;
  meta["s2_days"] = s2_days;
  meta["s1_days"] = s1_days;
  meta["s2_layout"] = "10m";
  io::write_json(dir / "meta.json", meta);
}

}  // namespace tof::preprocess
