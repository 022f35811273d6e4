#include "tof/checkpoint.hpp"

#include "tof/io.hpp"

namespace tof {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "tof-checkpoint";
constexpr int kVersion = 1;

}  // namespace

void save_checkpoint(const fs::path& dir, const Network& net, int epoch, double threshold,
                     const OptimizerState* optimizer, const json& train_config) {
  fs::create_directories(dir);
  const auto& params = net.params();
  if (auto bad = params.first_non_finite()) throw NumericError(*bad, "refusing to save checkpoint");

  json manifest = json::array();
  for (const auto& e : params.entries()) {
    manifest.push_back({{"name", e.name},
                        {"shape", e.shape},
                        {"offset", e.offset},
                        {"count", e.count},
                        {"learnable", e.learnable}});
  }
  std::vector<float> values(params.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(params.flat()[i]);
  io::write_f32(dir / "params.bin", values);

  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config"] = net.config();
  j["train_config"] = train_config;
  j["epoch"] = epoch;
  j["threshold"] = threshold;
  j["param_count"] = net.param_count();
  j["params"] = std::move(manifest);
  j["params_file"] = "params.bin";
  if (optimizer) {
    std::vector<double> moments = optimizer->m;
    moments.insert(moments.end(), optimizer->v.begin(), optimizer->v.end());
    io::write_f64(dir / "optimizer.bin", moments);
    j["optimizer"] = {{"file", "optimizer.bin"}, {"step", optimizer->step}};
  } else {
    std::error_code ec;
    fs::remove(dir / "optimizer.bin", ec);
  }
  io::write_json(dir / "model.json", j);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "model.json";
  if (!fs::exists(manifest_path)) throw IoError("checkpoint manifest not found: " + manifest_path.string());
  const json j = io::read_json(manifest_path);
  if (j.value("format", "") != kFormat) throw IoError(manifest_path.string() + ": not a checkpoint");
  if (j.value("version", 0) != kVersion) {
    throw IoError(manifest_path.string() + ": unsupported version " + j.at("version").dump());
  }

  Checkpoint ck;
  ck.config = j.at("config").get<NetConfig>();
  ck.epoch = j.at("epoch").get<int>();
  ck.threshold = j.at("threshold").get<double>();
  ck.train_config = j.value("train_config", json::object());

  const auto values = io::read_f32(dir / j.value("params_file", "params.bin"));
  std::size_t expected = 0;
  for (const auto& e : j.at("params")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const std::size_t id = ck.params.add(name, shape, e.at("learnable").get<bool>());
    const auto& info = ck.params.info(id);
    if (info.offset != e.at("offset").get<std::size_t>() || info.count != e.at("count").get<std::size_t>()) {
      throw IoError(manifest_path.string() + ": inconsistent offsets for '" + name + "'");
    }
    expected += info.count;
  }
  if (values.size() != expected) {
    throw IoError("params.bin holds " + std::to_string(values.size()) + " values, manifest expects " +
                  std::to_string(expected));
  }
  for (std::size_t i = 0; i < values.size(); ++i) ck.params.flat()[i] = values[i];

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    auto moments = io::read_f64(dir / o.at("file").get<std::string>());
    if (moments.size() != 2 * expected) throw IoError("optimizer.bin size does not match parameters");
    OptimizerState st;
    st.m.assign(moments.begin(), moments.begin() + static_cast<std::ptrdiff_t>(expected));
    st.v.assign(moments.begin() + static_cast<std::ptrdiff_t>(expected), moments.end());
    st.step = o.at("step").get<std::uint64_t>();
    ck.optimizer = std::move(st);
  }
  return ck;
}

}  // namespace tof
