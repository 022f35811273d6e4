#include "tof/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tof/preprocess.hpp"

namespace tof::io {

namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

template <class T>
void write_raw(const fs::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  std::vector<T> buf(values.begin(), values.end());
  for (auto& v : buf) v = to_little(v);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(T)));
  if (!out) throw IoError("write failed: " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (bytes % sizeof(T) != 0) throw IoError("truncated binary file: " + path.string());
  std::vector<T> buf(bytes / sizeof(T));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + path.string());
  for (auto& v : buf) v = to_little(v);
  return buf;
}

}  // namespace

void write_f32(const fs::path& path, std::span<const float> values) { write_raw(path, values); }
std::vector<float> read_f32(const fs::path& path) { return read_raw<float>(path); }
void write_f64(const fs::path& path, std::span<const double> values) { write_raw(path, values); }
std::vector<double> read_f64(const fs::path& path) { return read_raw<double>(path); }

FloatArray read_array_f32(const fs::path& path, const Shape& shape) {
  auto values = read_f32(path);
  if (values.size() != FloatArray::element_count(shape)) {
    throw IoError(path.string() + ": expected " +
                  std::to_string(FloatArray::element_count(shape)) + " floats for shape " +
                  shape_to_string(shape) + ", found " + std::to_string(values.size()));
  }
  return FloatArray(shape, std::move(values));
}

void write_array_f32(const fs::path& path, const FloatArray& a) { write_f32(path, a.values()); }

ByteArray read_binary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(std::remove_if(cell.begin(), cell.end(), ::isspace), cell.end());
      if (cell != "0" && cell != "1") {
        throw IoError(path.string() + ": expected 0/1 at row " + std::to_string(rows + 1) +
                      ", got '" + cell + "'");
      }
      values.push_back(cell == "1" ? 1 : 0);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols) {
      throw IoError(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                    std::to_string(count) + " columns, expected " + std::to_string(cols));
    }
    ++rows;
  }
  return ByteArray({rows, cols}, std::move(values));
}

void write_binary_csv(const fs::path& path, const ByteArray& grid) {
  require_rank(grid, 2, "csv grid");
  std::ostringstream os;
  for (std::size_t y = 0; y < grid.dim(0); ++y) {
    for (std::size_t x = 0; x < grid.dim(1); ++x) {
      if (x) os << ',';
      os << (grid(y, x) ? '1' : '0');
    }
    os << '\n';
  }
  write_text(path, os.str());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_plot_bundle(const fs::path& dir, const PlotBundle& bundle) {
  fs::create_directories(dir);
  const auto& stack = bundle.stack;
  const std::size_t steps = stack.steps();
  const std::size_t h = stack.height();
  const std::size_t w = stack.width();

  FloatArray s2({steps, h, w, static_cast<std::size_t>(kOpticalBands)});
  FloatArray ind({steps, h, w, static_cast<std::size_t>(kIndexBands)});
  FloatArray s1({steps, h, w, static_cast<std::size_t>(kRadarBands)});
  FloatArray slope({h, w});
  const auto& d = stack.data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t b = 0; b < kOpticalBands; ++b) s2(t, y, x, b) = d(t, y, x, b);
        for (std::size_t b = 0; b < kIndexBands; ++b) ind(t, y, x, b) = d(t, y, x, kOpticalBands + b);
        for (std::size_t b = 0; b < kRadarBands; ++b) {
          s1(t, y, x, b) = d(t, y, x, static_cast<std::size_t>(channel_index(Channel::VV)) + b);
        }
      }
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      slope(y, x) = d(0, y, x, static_cast<std::size_t>(channel_index(Channel::SLOPE)));
    }
  }
  write_array_f32(dir / "s2.bin", s2);
  write_array_f32(dir / "s1.bin", s1);
  write_array_f32(dir / "indices.bin", ind);
  write_array_f32(dir / "dem.bin", slope);

  json meta = bundle.extra_meta;
  meta["plot_id"] = stack.plot_id();
  meta["lat"] = bundle.lat;
  meta["lon"] = bundle.lon;
  meta["T"] = steps;
  meta["H"] = h;
  meta["W"] = w;
  meta["channels"] = std::vector<std::string>(kChannelNames.begin(), kChannelNames.end());
  meta["timestamps"] = stack.timestamps();
  meta["dem_content"] = "slope_normalized";
  meta["format_version"] = 1;
  write_json(dir / "meta.json", meta);

  if (bundle.label) {
    write_binary_csv(dir / "labels.csv", bundle.label->values());
  } else if (fs::exists(dir / "labels.csv")) {
    fs::remove(dir / "labels.csv");
  }
}

PlotBundle read_plot_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("plot bundle not found: " + dir.string());
  const json meta = read_json(dir / "meta.json");
  const auto steps = meta.at("T").get<std::size_t>();
  const auto h = meta.at("H").get<std::size_t>();
  const auto w = meta.at("W").get<std::size_t>();
  const auto channels = meta.at("channels").get<std::vector<std::string>>();
  if (channels != std::vector<std::string>(kChannelNames.begin(), kChannelNames.end())) {
    throw IoError(dir.string() + ": unexpected channel layout in meta.json");
  }
  const auto s2 = read_array_f32(dir / "s2.bin", {steps, h, w, kOpticalBands});
  const auto s1 = read_array_f32(dir / "s1.bin", {steps, h, w, kRadarBands});
  const auto slope = read_array_f32(dir / "dem.bin", {h, w});
  // Bundles written by other tools may omit the indices; derive them from s2.
  const auto ind = fs::exists(dir / "indices.bin")
                       ? read_array_f32(dir / "indices.bin", {steps, h, w, kIndexBands})
                       : preprocess::compute_indices(s2, meta.value("evi", std::string("as_printed")) == "standard"
                                                             ? preprocess::EviVariant::standard
                                                             : preprocess::EviVariant::as_printed);

  PlotBundle bundle{
      build_stack(s2, s1, ind, slope, meta.at("timestamps").get<std::vector<int>>(),
                  meta.at("plot_id").get<std::string>()),
      std::nullopt, meta.value("lat", 0.0), meta.value("lon", 0.0), meta};
  if (fs::exists(dir / "labels.csv")) {
    LabelGrid label(read_binary_csv(dir / "labels.csv"));
    if (label.height() != h || label.width() != w) {
      throw IoError(dir.string() + ": labels.csv extent does not match meta.json");
    }
    bundle.label = std::move(label);
  }
  return bundle;
}

std::vector<fs::path> list_bundles(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("directory not found: " + dir.string());
  if (fs::exists(dir / "meta.json")) return {dir};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

PlotSample load_plot_sample(const fs::path& dir) {
  auto bundle = read_plot_bundle(dir);
  if (!bundle.label) throw IoError(dir.string() + ": labels.csv missing");
  return PlotSample(std::move(bundle.stack), std::move(*bundle.label));
}

std::vector<PlotSample> load_dataset(const fs::path& dir) {
  std::vector<PlotSample> out;
  for (const auto& p : list_bundles(dir)) out.push_back(load_plot_sample(p));
  if (out.empty()) throw IoError("no plot bundles found in " + dir.string());
  return out;
}

}  // namespace tof::io
