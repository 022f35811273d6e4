#include "tof/cli.hpp"

#include <chrono>
#include <ctime>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tof/checkpoint.hpp"
#include "tof/errors.hpp"
#include "tof/evaluate.hpp"
#include "tof/inference.hpp"
#include "tof/io.hpp"
#include "tof/preprocess.hpp"
#include "tof/raw_bundle.hpp"
#include "tof/synth.hpp"
#include "tof/trainer.hpp"

namespace tof::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string join_args(const std::vector<std::string>& args) {
  std::string s = "tof";
  for (const auto& a : args) s += " " + a;
  return s;
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw IoError(std::string(what) + " directory not found: " + p.string());
}

json preprocess_defaults() {
  const preprocess::PreprocessConfig d;
  return {{"whittaker", {{"lambda", d.whittaker.lambda}, {"order", d.whittaker.order}}},
          {"shadow",
           {{"b8_threshold", d.shadow.b8_threshold},
            {"b11_threshold", d.shadow.b11_threshold},
            {"max_cloud_distance_m", d.shadow.max_cloud_distance_m}}},
          {"max_contamination", d.max_contamination},
          {"grid_spacing_days", d.grid_spacing_days},
          {"fallback_cloud_b2", d.fallback_cloud_b2},
          {"evi", d.evi == preprocess::EviVariant::as_printed ? "as_printed" : "standard"}};
}

preprocess::PreprocessConfig preprocess_from_json(const json& j) {
  preprocess::PreprocessConfig c;
  c.whittaker.lambda = j.at("whittaker").at("lambda").get<double>();
  c.whittaker.order = j.at("whittaker").at("order").get<int>();
  c.shadow.b8_threshold = j.at("shadow").at("b8_threshold").get<double>();
  c.shadow.b11_threshold = j.at("shadow").at("b11_threshold").get<double>();
  c.shadow.max_cloud_distance_m = j.at("shadow").at("max_cloud_distance_m").get<double>();
  c.max_contamination = j.at("max_contamination").get<double>();
  c.grid_spacing_days = j.at("grid_spacing_days").get<int>();
  c.fallback_cloud_b2 = j.at("fallback_cloud_b2").get<double>();
  const auto evi = j.at("evi").get<std::string>();
  if (evi == "as_printed") {
    c.evi = preprocess::EviVariant::as_printed;
  } else if (evi == "standard") {
    c.evi = preprocess::EviVariant::standard;
  } else {
    throw ConfigError("evi must be 'as_printed' or 'standard', got '" + evi + "'");
  }
  return c;
}

/// defaults <- config file <- dotted overrides.
json resolve_config(json defaults, const std::string& config_path, const std::vector<std::string>& overrides) {
  if (!config_path.empty()) {
    if (!fs::is_regular_file(config_path)) throw IoError("config file not found: " + config_path);
    const json file = io::read_json(config_path);
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object: " + config_path);
    defaults.merge_patch(file);
  }
  apply_overrides(defaults, overrides);
  return defaults;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& args, const std::string& command,
                    const json& config, std::optional<std::uint64_t> seed, const std::string& started) {
  fs::create_directories(dir);
  json m = {{"command", command},
            {"argv", join_args(args)},
            {"config", config},
            {"seed", seed ? json(*seed) : json(nullptr)},
            {"started_at", started},
            {"finished_at", utc_now()}};
  io::write_json(dir / "run_manifest.json", m);
}

}  // namespace

void apply_overrides(json& config, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override must look like key.path=value: " + item);
    const std::string key = item.substr(0, eq), raw = item.substr(eq + 1);
    json* node = &config;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) throw UsageError("unknown config key '" + key + "'");
      node = &(*node)[part];
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    *node = value;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tree detection outside forests: preprocess, synth, train, predict, evaluate", "tof"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = auto)")->check(CLI::NonNegativeNumber);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "Config override key.path=value (repeatable)");
  };

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Raw bundle -> plot bundle");
  std::string pre_in, pre_out;
  std::optional<double> lambda, shadow_b8, shadow_b11;
  pre->add_option("--input", pre_in, "Raw bundle directory")->required();
  pre->add_option("--output", pre_out, "Plot bundle directory")->required();
  pre->add_option("--lambda", lambda, "Whittaker smoothing strength");
  pre->add_option("--shadow-b8", shadow_b8, "Shadow B8 threshold");
  pre->add_option("--shadow-b11", shadow_b11, "Shadow B11 threshold");
  add_config(pre);

  // synth
  auto* syn = app.add_subcommand("synth", "Generate synthetic plot bundles");
  std::size_t syn_n = 200;
  std::string syn_mix = "uniform", syn_out;
  std::uint64_t syn_seed = 0;
  double syn_cloud = 0.3, syn_noise = 0.01;
  bool syn_raw = false;
  syn->add_option("--n", syn_n, "Number of plots")->check(CLI::PositiveNumber);
  syn->add_option("--cover-mix", syn_mix, "uniform | low | high")
      ->check(CLI::IsMember({"uniform", "low", "high"}));
  syn->add_option("--seed", syn_seed, "Seed");
  syn->add_option("--cloud-gap", syn_cloud, "Probability an acquisition is clouded");
  syn->add_option("--noise", syn_noise, "Per-band reflectance noise sigma");
  syn->add_option("--out", syn_out, "Output directory")->required();
  syn->add_flag("--raw", syn_raw, "Also write raw bundles under <out>/raw");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on plot bundles");
  std::string tr_data, tr_out;
  std::uint64_t tr_seed = 0;
  bool tr_resume = false;
  tr->add_option("--data", tr_data, "Directory of plot bundles")->required();
  tr->add_option("--seed", tr_seed, "Seed");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_flag("--resume", tr_resume, "Continue from <out>/checkpoint");
  add_config(tr);

  // predict
  auto* pr = app.add_subcommand("predict", "Tile a scene bundle and write probabilities and a mask");
  std::string pr_scene, pr_model, pr_out, pr_threshold = "auto";
  pr->add_option("--scene", pr_scene, "Plot bundle of any size >= 14x14")->required();
  pr->add_option("--model", pr_model, "Checkpoint directory")->required();
  pr->add_option("--threshold", pr_threshold, "auto (model threshold) or a value in [0, 1]");
  pr->add_option("--out", pr_out, "Output directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Tolerant accuracy of predicted masks against labels");
  std::string ev_pred, ev_labels, ev_out;
  std::uint64_t ev_seed = 0;
  std::size_t ev_resamples = 1000;
  ev->add_option("--pred", ev_pred, "Directory with <plot>/mask.csv")->required();
  ev->add_option("--labels", ev_labels, "Directory with <plot>/labels.csv")->required();
  ev->add_option("--out", ev_out, "Report JSON path")->required();
  ev->add_option("--seed", ev_seed, "Bootstrap seed");
  ev->add_option("--resamples", ev_resamples, "Bootstrap resamples");

  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--threads") {
      ++i;
      continue;
    }
    if (args[i].empty() || args[i][0] == '-') continue;
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == args[i];
    if (!known) {
      err << "unknown subcommand '" << args[i] << "'\n" << app.help();
      return 2;
    }
    break;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    app.exit(e, out, err);
    err << app.help();
    return 2;
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  const std::string started = utc_now();
  try {
    if (pre->parsed()) {
      require_dir(pre_in, "input");
      json cfg = resolve_config(preprocess_defaults(), config_path, overrides);
      if (lambda) cfg["whittaker"]["lambda"] = *lambda;
      if (shadow_b8) cfg["shadow"]["b8_threshold"] = *shadow_b8;
      if (shadow_b11) cfg["shadow"]["b11_threshold"] = *shadow_b11;
      const auto pc = preprocess_from_json(cfg);
      const auto scene = preprocess::read_raw_bundle(pre_in, pc.normalization);
      auto result = preprocess::preprocess_scene(scene, pc);
      io::PlotBundle bundle{std::move(result.stack), scene.label, scene.lat, scene.lon, json::object()};
      bundle.extra_meta["preprocess"] = {{"acquisitions", result.report.acquisitions},
                                         {"dropped", result.report.dropped},
                                         {"missing_fraction", result.report.missing_fraction},
                                         {"upsampled_20m", result.report.upsampled_20m}};
      io::write_plot_bundle(pre_out, bundle);
      write_manifest(pre_out, args, "preprocess", cfg, std::nullopt, started);
      out << "wrote " << pre_out << "\n";
    } else if (syn->parsed()) {
      synth::DatasetConfig dc;
      dc.count = syn_n;
      dc.mix = synth::cover_mix_from_name(syn_mix);
      dc.seed = syn_seed;
      dc.cloud_gap_fraction = syn_cloud;
      dc.noise_sigma = syn_noise;
      const auto plots = synth::generate_dataset(dc);
      for (const auto& p : plots) {
        const auto& id = p.sample.stack.plot_id();
        io::PlotBundle bundle{p.sample.stack, p.sample.label, 0.0, 0.0,
                              {{"background", synth::background_name(p.background)}}};
        io::write_plot_bundle(fs::path(syn_out) / id, bundle);
        if (syn_raw) preprocess::write_raw_bundle(fs::path(syn_out) / "raw" / id, p.raw);
      }
      const json cfg = {{"n", syn_n},
                        {"cover_mix", syn_mix},
                        {"cloud_gap_fraction", syn_cloud},
                        {"noise_sigma", syn_noise},
                        {"raw", syn_raw}};
      write_manifest(syn_out, args, "synth", cfg, syn_seed, started);
      out << "wrote " << plots.size() << " plots to " << syn_out << "\n";
    } else if (tr->parsed()) {
      require_dir(tr_data, "data");
      const json cfg = resolve_config(json(TrainConfig{}), config_path, overrides);
      const auto tc = cfg.get<TrainConfig>();
      tc.validate();
      const auto data = io::load_dataset(tr_data);
      if (data.empty()) throw DataError("no plot bundles found in " + tr_data);
      fs::create_directories(tr_out);
      io::write_json(fs::path(tr_out) / "config.json", cfg);
      TrainOptions opts;
      opts.out_dir = tr_out;
      opts.resume = tr_resume;
      opts.on_epoch = [&out](const EpochLog& e) {
        out << "epoch " << e.epoch << " loss " << e.total << " accuracy " << e.accuracy << "\n";
      };
      const auto result = train(tc, data, tr_seed, opts);
      write_manifest(tr_out, args, "train", cfg, tr_seed, started);
      out << "trained " << result.epochs_completed << " epochs; model in " << (fs::path(tr_out) / "model") << "\n";
    } else if (pr->parsed()) {
      require_dir(pr_scene, "scene");
      require_dir(pr_model, "model");
      const auto ckpt = load_checkpoint(pr_model);
      double threshold = ckpt.threshold;
      if (pr_threshold != "auto") {
        std::size_t used = 0;
        try {
          threshold = std::stod(pr_threshold, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != pr_threshold.size() || !(threshold >= 0.0 && threshold <= 1.0)) {
          throw UsageError("--threshold must be 'auto' or a number in [0, 1], got '" + pr_threshold + "'");
        }
      }
      const int stride = ckpt.train_config.value("time_stride", 1);
      const auto bundle = io::read_plot_bundle(pr_scene);
      const Network net = ckpt.network();
      const auto pred = predict_scene(bundle.stack, net, BlendPlan{}, stride);
      fs::create_directories(pr_out);
      const auto& probs = pred.probs();
      std::vector<float> f32(probs.size());
      for (std::size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(probs[i]);
      io::write_f32(fs::path(pr_out) / "probs.bin", f32);
      io::write_json(fs::path(pr_out) / "probs.json", {{"shape", {pred.height(), pred.width()}},
                                                       {"dtype", "float32"},
                                                       {"byte_order", "little"},
                                                       {"threshold", threshold}});
      io::write_binary_csv(fs::path(pr_out) / "mask.csv", binarize(probs, threshold).values());
      const json cfg = {{"scene", pr_scene}, {"model", pr_model}, {"threshold", threshold}, {"time_stride", stride}};
      write_manifest(pr_out, args, "predict", cfg, std::nullopt, started);
      out << "wrote " << pr_out << "\n";
    } else if (ev->parsed()) {
      require_dir(ev_pred, "pred");
      require_dir(ev_labels, "labels");
      std::vector<PlotPair> pairs;
      auto add_pair = [&](const std::string& id, const fs::path& mask_path) {
        const fs::path label_path = fs::path(ev_labels) / id / "labels.csv";
        if (!fs::is_regular_file(label_path)) throw DataError("no labels for plot '" + id + "': " + label_path.string());
        pairs.push_back({id, LabelGrid(io::read_binary_csv(label_path)), LabelGrid(io::read_binary_csv(mask_path))});
      };
      std::vector<fs::path> dirs;
      for (const auto& e : fs::directory_iterator(ev_pred)) {
        if (e.is_directory() && fs::is_regular_file(e.path() / "mask.csv")) dirs.push_back(e.path());
      }
      std::sort(dirs.begin(), dirs.end());
      for (const auto& d : dirs) add_pair(d.filename().string(), d / "mask.csv");
      if (pairs.empty()) throw DataError("no <plot>/mask.csv files found in " + ev_pred);
      const auto report = evaluate_plots(pairs, ev_seed, ev_resamples);
      const fs::path report_path(ev_out);
      if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
      io::write_json(report_path, to_json(report));
      const json cfg = {{"pred", ev_pred}, {"labels", ev_labels}, {"resamples", ev_resamples}};
      const fs::path manifest_dir = report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
      write_manifest(manifest_dir, args, "evaluate", cfg, ev_seed, started);
      out << "wrote " << ev_out << " (" << pairs.size() << " plots)\n";
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace tof::cli
