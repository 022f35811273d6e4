#include "tof/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tof/checkpoint.hpp"
#include "tof/evaluate.hpp"
#include "tof/inference.hpp"
#include "tof/io.hpp"
#include "tof/objective.hpp"
#include "tof/random.hpp"

namespace tof {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  net.validate();
  schedule.validate();
  optimizer.validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(class_beta >= 0.0 && class_beta < 1.0)) throw ConfigError("class_beta must lie in [0, 1)");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  if (time_stride < 1) throw ConfigError("time_stride must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"net", c.net},
       {"schedule", c.schedule},
       {"optimizer", c.optimizer},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"checkpoint_every", c.checkpoint_every},
       {"class_beta", c.class_beta},
       {"grad_clip", c.grad_clip ? json(*c.grad_clip) : json(nullptr)},
       {"time_stride", c.time_stride}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.net = j.value("net", d.net);
  c.schedule = j.value("schedule", d.schedule);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.class_beta = j.value("class_beta", d.class_beta);
  c.grad_clip.reset();
  if (j.contains("grad_clip") && !j.at("grad_clip").is_null()) c.grad_clip = j.at("grad_clip").get<double>();
  c.time_stride = j.value("time_stride", d.time_stride);
}

std::vector<std::vector<std::size_t>> equibatch(std::span<const int> deciles, std::size_t batch_size,
                                                std::uint64_t seed, int epoch) {
  if (deciles.empty()) throw DataError("equibatch needs a nonempty dataset");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::array<std::vector<std::size_t>, 10> members;
  for (std::size_t i = 0; i < deciles.size(); ++i) {
    if (deciles[i] < 0 || deciles[i] > 9) throw DataError("cover decile out of range");
    members[static_cast<std::size_t>(deciles[i])].push_back(i);
  }
  std::array<int, 10> source{};
  for (int d = 0; d < 10; ++d) {
    int best = -1;
    for (int dist = 0; dist < 10 && best < 0; ++dist) {
      if (d - dist >= 0 && !members[d - dist].empty()) best = d - dist;
      else if (d + dist < 10 && !members[d + dist].empty()) best = d + dist;
    }
    source[d] = best;
  }

  Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
  std::array<std::vector<std::size_t>, 10> queues;
  auto draw = [&](int d) {
    auto& q = queues[d];
    if (q.empty()) {
      q = members[d];
      rng.shuffle(q);
      std::reverse(q.begin(), q.end());
    }
    const std::size_t v = q.back();
    q.pop_back();
    return v;
  };

  const std::size_t n_batches = (deciles.size() + batch_size - 1) / batch_size;
  std::vector<std::vector<std::size_t>> batches(n_batches);
  for (auto& batch : batches) {
    for (std::size_t d = 0; d < 10; ++d) {
      const std::size_t quota = batch_size / 10 + (d < batch_size % 10 ? 1 : 0);
      for (std::size_t k = 0; k < quota; ++k) batch.push_back(draw(source[d]));
    }
  }
  return batches;
}

std::vector<int> dataset_deciles(const std::vector<PlotSample>& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(cover_decile(s.label.positives(), s.label.values().size()));
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

void write_training_log(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,ce,bl,alpha,total,ua,pa,accuracy\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << fmt(e.ce) << ',' << fmt(e.bl) << ',' << fmt(e.alpha) << ',' << fmt(e.total)
       << ',' << fmt(e.ua) << ',' << fmt(e.pa) << ',' << fmt(e.accuracy) << '\n';
  }
  io::write_text(path, os.str());
}

std::vector<EpochLog> read_training_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochLog> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(8);
    EpochLog e;
    e.epoch = std::stoi(cells[0]);
    e.ce = std::stod(cells[1]);
    e.bl = std::stod(cells[2]);
    e.alpha = std::stod(cells[3]);
    e.total = std::stod(cells[4]);
    e.ua = parse_opt(cells[5]);
    e.pa = parse_opt(cells[6]);
    e.accuracy = std::stod(cells[7]);
    out.push_back(e);
  }
  return out;
}

TrainResult train(const TrainConfig& config, const std::vector<PlotSample>& data, std::uint64_t seed,
                  const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw DataError("training dataset is empty");

  std::vector<Tensor> inputs;
  std::vector<Tensor> phis;
  std::uint64_t n_pos = 0, n_total = 0;
  for (const auto& s : data) {
    inputs.push_back(s.stack.to_input(config.time_stride));
    phis.push_back(objective::signed_distance_map(s.label));
    n_pos += s.label.positives();
    n_total += s.label.values().size();
  }
  const auto weights = objective::class_weights(n_total - n_pos, n_pos, config.class_beta);
  const auto deciles = dataset_deciles(data);
  const json config_json = config;

  TrainResult result{Network(config.net, derive_seed(seed, {0})), {}, {}, 0.5, 0};
  AdaBound opt(config.optimizer, result.network.params());

  fs::path ckpt_dir, log_path;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    ckpt_dir = *options.out_dir / "checkpoint";
    log_path = *options.out_dir / "training_log.csv";
  }
  if (options.resume && options.out_dir && fs::exists(ckpt_dir / "model.json")) {
    Checkpoint ck = load_checkpoint(ckpt_dir);
    if (ck.config != config.net) throw ConfigError("checkpoint network config differs from the run config");
    result.network = ck.network();
    if (ck.optimizer) opt = AdaBound(config.optimizer, result.network.params(), *ck.optimizer);
    result.epochs_completed = ck.epoch;
    if (fs::exists(log_path)) {
      for (const auto& e : read_training_log(log_path)) {
        if (e.epoch < ck.epoch) result.log.push_back(e);
      }
    }
  }

  Network& net = result.network;
  auto save = [&](int epochs_done) {
    if (options.out_dir) save_checkpoint(ckpt_dir, net, epochs_done, 0.5, &opt.state(), config_json);
  };
  if (options.out_dir && result.epochs_completed == 0) save(0);

  int last_epoch = config.epochs;
  if (options.stop_after_epoch) last_epoch = std::min(last_epoch, *options.stop_after_epoch);
  for (int epoch = result.epochs_completed; epoch < last_epoch; ++epoch) {
    const auto batches = equibatch(deciles, static_cast<std::size_t>(config.batch_size), seed, epoch);
    const double alpha = schedule_at(epoch, config.schedule, config.net.dropblock_max).alpha;
    EpochLog entry;
    entry.epoch = epoch;
    entry.alpha = alpha;
    ToleranceConfusion confusion;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      std::vector<const Tensor*> ptrs;
      for (std::size_t idx : batch) ptrs.push_back(&inputs[idx]);
      const ForwardOptions fo = training_options(epoch, config.schedule, config.net,
                                                 derive_seed(seed, {1, static_cast<std::uint64_t>(epoch), b}));
      std::vector<objective::LossTerms> terms(batch.size());
      const double scale = 1.0 / static_cast<double>(batch.size());
      nn::Gradients grads(net.params());
      const BatchOutput out = net.forward_backward(
          ptrs, fo,
          [&](std::size_t i, const Tensor& probs) {
            const std::size_t idx = batch[i];
            auto lg = objective::combined_loss_with_grad(probs, data[idx].label, phis[idx], alpha, weights);
            terms[i] = lg.terms;
            for (auto& v : lg.d_probs.storage()) v *= scale;
            return std::move(lg.d_probs);
          },
          grads);
      double ce = 0, bl = 0, total = 0;
      for (const auto& t : terms) {
        ce += t.ce * scale;
        bl += t.bl * scale;
        total += t.total * scale;
      }
      if (!std::isfinite(total)) {
        throw NumericError("loss", "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                       ": ce=" + fmt(ce) + " bl=" + fmt(bl));
      }
      if (config.grad_clip) {
        const double norm = grads.global_norm();
        if (norm > *config.grad_clip) grads.scale(*config.grad_clip / norm);
      }
      opt.step(net.params(), grads);
      net.params().round_to_float();
      net.commit_running_stats(out.stats);

      entry.ce += ce / static_cast<double>(batches.size());
      entry.bl += bl / static_cast<double>(batches.size());
      entry.total += total / static_cast<double>(batches.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        confusion += strict_confusion(data[batch[i]].label, binarize(out.probs[i], 0.5));
      }
    }
    const Accuracy acc = users_producers(confusion);
    entry.ua = acc.ua;
    entry.pa = acc.pa;
    entry.accuracy = acc.oa.value_or(0.0);
    result.log.push_back(entry);
    result.epochs_completed = epoch + 1;
    if (options.on_epoch) options.on_epoch(entry);
    if (options.out_dir) {
      write_training_log(log_path, result.log);
      const bool periodic = config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0;
      if (periodic || epoch + 1 == last_epoch) save(epoch + 1);
    }
  }
  result.optimizer = opt.state();

  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor p = net.predict(inputs[i]);
    probs.insert(probs.end(), p.values().begin(), p.values().end());
    labels.insert(labels.end(), data[i].label.values().values().begin(), data[i].label.values().values().end());
  }
  try {
    result.threshold = select_threshold(probs, labels);
  } catch (const DataError&) {
    result.threshold = 0.5;
  }
  if (options.out_dir) {
    save_checkpoint(*options.out_dir / "model", net, result.epochs_completed, result.threshold, nullptr,
                    config_json);
    if (result.log.empty()) write_training_log(log_path, result.log);
  }
  return result;
}

}  // namespace tof
