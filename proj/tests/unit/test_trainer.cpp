#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "support/oracles.hpp"
#include "tof/checkpoint.hpp"
#include "tof/synth.hpp"
#include "tof/trainer.hpp"

using namespace tof;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.net.hidden_per_direction = 4;
  c.net.fpa_width = 8;
  c.net.conv_block_width = 8;
  c.time_stride = 4;
  c.batch_size = 4;
  c.epochs = 3;
  c.checkpoint_every = 1;
  return c;
}

const std::vector<PlotSample>& tiny_data() {
  static const std::vector<PlotSample> data = [] {
    synth::DatasetConfig dc;
    dc.count = 6;
    dc.seed = 31;
    std::vector<PlotSample> out;
    for (auto& p : synth::generate_dataset(dc)) out.push_back(p.sample);
    return out;
  }();
  return data;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tof_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Plain Adam with bias correction folded into the step size.
void adam_reference(std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                    const std::vector<double>& g, int t, const AdaBoundConfig& c) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
    const double a = c.lr * std::sqrt(1 - std::pow(c.beta2, t)) / (1 - std::pow(c.beta1, t));
    p[i] -= a * m[i] / (std::sqrt(v[i]) + c.eps);
  }
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("schedules start neutral and ramp to their caps") {
    const ScheduleConfig s;
    const auto v0 = schedule_at(0, s, 0.2);
    CHECK(v0.dropblock == 0.0);
    CHECK(v0.alpha == 0.0);
    CHECK(v0.rmax == 1.0);
    CHECK(v0.dmax == 0.0);
    const auto late = schedule_at(500, s, 0.2);
    CHECK(late.dropblock == doctest::Approx(0.2));
    CHECK(late.rmax == doctest::Approx(3.0));
    CHECK(late.dmax == doctest::Approx(5.0));
    CHECK(late.alpha == doctest::Approx(0.5));
    CHECK(schedule_at(25, s, 0.2).dropblock == doctest::Approx(0.1));
    ScheduleValues prev = v0;
    for (int e = 1; e < 120; ++e) {
      const auto v = schedule_at(e, s, 0.2);
      CHECK(v.dropblock >= prev.dropblock);
      CHECK(v.rmax >= prev.rmax);
      CHECK(v.dmax >= prev.dmax);
      CHECK(v.alpha >= prev.alpha);
      prev = v;
    }
    CHECK_THROWS_AS(schedule_at(-1, s, 0.2), ConfigError);
    CHECK(linear_ramp(5, 0, 10, 1.0, 3.0) == doctest::Approx(2.0));
    CHECK(linear_ramp(-3, 0, 10, 1.0, 3.0) == 1.0);
    CHECK(linear_ramp(30, 0, 10, 1.0, 3.0) == 3.0);
  }

  TEST_CASE("equibatch draws evenly across deciles") {
    // Two plots in each of deciles 0 and 5: a batch of 10 takes one plot per decile,
    // empty deciles borrowing from the nearest populated one (ties go lower).
    const std::vector<int> deciles = {0, 0, 5, 5};
    const auto batches = equibatch(deciles, 10, 1, 0);
    REQUIRE(batches.size() == 1);
    std::map<std::size_t, int> uses;
    for (auto i : batches[0]) ++uses[i];
    CHECK(batches[0].size() == 10);
    // Deciles 0-2 borrow from decile 0, 3-9 from decile 5.
    CHECK(uses[0] + uses[1] == 3);
    CHECK(uses[2] + uses[3] == 7);
    // Each decile's pool is exhausted before any plot repeats.
    CHECK(std::abs(uses[0] - uses[1]) <= 1);
    CHECK(std::abs(uses[2] - uses[3]) <= 1);
  }

  TEST_CASE("equibatch tie goes to the lower decile and is deterministic") {
    const std::vector<int> deciles = {1, 3};
    const auto b = equibatch(deciles, 10, 7, 2);
    std::size_t from_low = std::count(b[0].begin(), b[0].end(), std::size_t{0});
    // Deciles 0, 1, 2 (tie) -> index 0; 3..9 -> index 1.
    CHECK(from_low == 3);
    CHECK(b == equibatch(deciles, 10, 7, 2));
    const std::vector<int> many(37, 4);
    const auto e0 = equibatch(many, 10, 7, 0);
    CHECK(e0.size() == 4);
    CHECK(e0 != equibatch(many, 10, 7, 1));
    for (const auto& batch : e0) CHECK(batch.size() == 10);
    CHECK_THROWS_AS(equibatch(std::vector<int>{}, 10, 0, 0), DataError);
    CHECK_THROWS_AS(equibatch(deciles, 0, 0, 0), ConfigError);
  }

  TEST_CASE("equibatch remainder goes to the lowest deciles") {
    std::vector<int> deciles;
    for (int d = 0; d < 10; ++d) deciles.push_back(d);
    const auto b = equibatch(deciles, 13, 3, 0);
    std::vector<int> count(10, 0);
    for (auto i : b[0]) ++count[i];
    for (int d = 0; d < 10; ++d) CHECK(count[d] == (d < 3 ? 2 : 1));
  }

  TEST_CASE("adabound with zero gradient leaves parameters unchanged") {
    Network net(tiny_config().net, 1);
    const auto before = net.params();
    AdaBound opt(AdaBoundConfig{}, net.params());
    nn::Gradients g(net.params());
    for (int i = 0; i < 3; ++i) opt.step(net.params(), g);
    CHECK(net.params() == before);
  }

  TEST_CASE("unbounded adabound is adam") {
    nn::ParamStore p;
    p.add("w", {5});
    p.add("stat", {2}, false);
    Rng rng(4);
    for (auto& v : p.flat()) v = rng.normal();
    AdaBoundConfig c;
    c.unbounded = true;
    AdaBound opt(c, p);
    std::vector<double> ref(p.values(0).begin(), p.values(0).end()), m(5, 0.0), v(5, 0.0);
    const std::vector<double> stat(p.values(1).begin(), p.values(1).end());
    double worst = 0.0;
    for (int t = 1; t <= 20; ++t) {
      nn::Gradients g(p);
      std::vector<double> gv(5);
      for (std::size_t i = 0; i < 5; ++i) gv[i] = g.data(0)[i] = rng.normal();
      g.data(1)[0] = 1.0;
      opt.step(p, g);
      adam_reference(ref, m, v, gv, t, c);
      for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(ref[i] - p.values(0)[i]));
    }
    CHECK(worst <= 1e-10);
    CHECK(std::equal(stat.begin(), stat.end(), p.values(1).begin()));
  }

  TEST_CASE("adabound rates stay inside the fixed interval") {
    nn::ParamStore p;
    p.add("w", {50});
    Rng rng(5);
    AdaBound opt(AdaBoundConfig{}, p);
    for (int t = 1; t <= 200; ++t) {
      nn::Gradients g(p);
      for (std::size_t i = 0; i < 50; ++i) g.data(0)[i] = rng.normal() * std::pow(10.0, rng.uniform(-6, 3));
      opt.step(p, g);
      CHECK(opt.last_min_rate() >= 1e-4);
      CHECK(opt.last_max_rate() <= 2e-2);
      CHECK(opt.lower_bound(t) <= opt.upper_bound(t));
    }
    nn::Gradients bad(p);
    bad.data(0)[3] = std::nan("");
    CHECK_THROWS_AS(opt.step(p, bad), NumericError);
  }

  TEST_CASE("zero epochs leaves the initialization in the checkpoint") {
    TrainConfig c = tiny_config();
    c.epochs = 0;
    const fs::path dir = scratch("zero_epochs");
    const auto r = train(c, tiny_data(), 9, {.out_dir = dir});
    const auto ck = load_checkpoint(dir / "checkpoint");
    CHECK(ck.epoch == 0);
    CHECK(ck.params == Network(c.net, derive_seed(9, {0})).params());
    CHECK(r.log.empty());
    fs::remove_all(dir);
  }

  TEST_CASE("checkpoint round trip is bit identical") {
    Network net(tiny_config().net, 3);
    const fs::path dir = scratch("roundtrip");
    save_checkpoint(dir, net, 4, 0.37);
    const auto ck = load_checkpoint(dir);
    CHECK(ck.epoch == 4);
    CHECK(ck.threshold == 0.37);
    CHECK(ck.config == net.config());
    const Tensor x = tiny_data()[0].stack.to_input(4);
    CHECK(ck.network().predict(x).storage() == net.predict(x).storage());
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);
    fs::remove_all(dir);
  }

  TEST_CASE("resumed training matches an uninterrupted run") {
    const TrainConfig c = tiny_config();
    const fs::path a = scratch("resume_a"), b = scratch("resume_b");
    const auto full = train(c, tiny_data(), 5, {.out_dir = a});
    train(c, tiny_data(), 5, {.out_dir = b, .stop_after_epoch = 1});
    const auto resumed = train(c, tiny_data(), 5, {.out_dir = b, .resume = true});
    CHECK(resumed.log == full.log);
    CHECK(resumed.network.params() == full.network.params());
    CHECK(resumed.optimizer == full.optimizer);
    CHECK(slurp(a / "training_log.csv") == slurp(b / "training_log.csv"));
    CHECK(slurp(a / "model" / "params.bin") == slurp(b / "model" / "params.bin"));
    CHECK(read_training_log(a / "training_log.csv") == full.log);
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("training loss falls over the first epochs") {
    TrainConfig c = tiny_config();
    c.epochs = 10;
    c.batch_size = 6;
    const auto r = train(c, tiny_data(), 2);
    REQUIRE(r.log.size() == 10);
    // Combined loss changes with alpha; compare the cross-entropy part.
    CHECK(r.log.back().ce < r.log.front().ce);
    for (const auto& e : r.log) CHECK(std::isfinite(e.total));
    CHECK(r.threshold > 0.0);
    CHECK(r.threshold < 1.0);
  }

  TEST_CASE("train config validation and json round trip") {
    TrainConfig c = tiny_config();
    c.grad_clip = 5.0;
    const nlohmann::json j = c;
    CHECK(j.get<TrainConfig>() == c);
    TrainConfig bad = c;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(train(c, {}, 0), DataError);
  }
}
