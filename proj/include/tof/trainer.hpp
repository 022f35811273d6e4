#pragma once

// Training loop: equibatch sampling by tree-cover decile, combined loss,
// AdaBound updates, regularization schedules, logging and resumable
// checkpoints.

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "tof/network.hpp"
#include "tof/optimizer.hpp"
#include "tof/schedules.hpp"

namespace tof {

struct TrainConfig {
  NetConfig net;
  ScheduleConfig schedule;
  AdaBoundConfig optimizer;
  int epochs = 100;
  int batch_size = 20;
  int checkpoint_every = 10;
  double class_beta = 0.999;
  std::optional<double> grad_clip;  // global-norm clip, off when unset
  int time_stride = 1;              // keep every n-th time step

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Batches of dataset indices for one epoch. Each batch takes batch_size/10
/// plots per cover decile (remainder to the lowest deciles); empty deciles
/// draw from the nearest populated one, ties to the lower. ceil(N / batch)
/// batches; deterministic in (seed, epoch).
std::vector<std::vector<std::size_t>> equibatch(std::span<const int> deciles, std::size_t batch_size,
                                                std::uint64_t seed, int epoch);

std::vector<int> dataset_deciles(const std::vector<PlotSample>& data);

struct EpochLog {
  int epoch = 0;
  double ce = 0.0;
  double bl = 0.0;
  double alpha = 0.0;
  double total = 0.0;
  std::optional<double> ua;
  std::optional<double> pa;
  double accuracy = 0.0;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainOptions {
  /// Writes training_log.csv, checkpoint/ (latest, resumable) and model/ (final).
  std::optional<std::filesystem::path> out_dir;
  /// Continue from out_dir/checkpoint when present.
  bool resume = false;
  /// Stop after this many epochs of the configured budget (for interrupted-run tests).
  std::optional<int> stop_after_epoch;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Network network;
  OptimizerState optimizer;
  std::vector<EpochLog> log;
  double threshold = 0.5;
  int epochs_completed = 0;
};

TrainResult train(const TrainConfig& config, const std::vector<PlotSample>& data, std::uint64_t seed,
                  const TrainOptions& options = {});

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_training_log(const std::filesystem::path& path);

}  // namespace tof
