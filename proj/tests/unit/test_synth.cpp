#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "tof/baseline.hpp"
#include "tof/synth.hpp"

using namespace tof;

TEST_SUITE("synth") {
  TEST_CASE("zero cover gives an empty label") {
    synth::SynthConfig c;
    c.cover_target = 0.0;
    c.seed = 4;
    const auto plot = synth::generate_plot(c);
    CHECK(plot.sample.label.positives() == 0);
    CHECK(plot.sample.cover == 0.0);
  }

  TEST_CASE("tree placement meets the cover target") {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      synth::SynthConfig c;
      c.seed = s;
      c.cover_target = 0.5;
      Rng rng(derive_seed(s, {1}));
      const auto mask = synth::place_trees(c, rng);
      const double cover = LabelGrid(mask).cover();
      CHECK(std::abs(cover - 0.5) <= 0.1);
      sum += cover;
    }
    CHECK(sum / 100.0 >= 0.4);
    CHECK(sum / 100.0 <= 0.6);
  }

  TEST_CASE("infeasible cover is reported") {
    synth::SynthConfig c;
    c.cover_target = 1.0;
    c.max_attempts = 3;
    CHECK_THROWS_AS(synth::generate_plot(c), DataError);
    synth::SynthConfig bad;
    bad.radius_min = 3;
    bad.radius_max = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("plots are a function of the seed") {
    synth::SynthConfig c;
    c.seed = 12;
    const auto a = synth::generate_plot(c);
    const auto b = synth::generate_plot(c);
    CHECK(a.sample.stack.data().storage() == b.sample.stack.data().storage());
    CHECK(a.sample.label.values().storage() == b.sample.label.values().storage());
    c.seed = 13;
    CHECK(synth::generate_plot(c).sample.stack.data().storage() != a.sample.stack.data().storage());
  }

  TEST_CASE("stack invariants and exact label cover") {
    synth::DatasetConfig dc;
    dc.count = 8;
    dc.seed = 3;
    for (const auto& p : synth::generate_dataset(dc)) {
      const auto& s = p.sample.stack;
      CHECK(s.data().shape() == Shape{24, 14, 14, std::size_t(kNumChannels)});
      std::size_t bad = 0;
      for (float v : s.data().storage()) bad += std::isfinite(v) ? 0 : 1;
      CHECK(bad == 0);
      CHECK(p.sample.cover == doctest::Approx(static_cast<double>(p.sample.label.positives()) / 196.0));
      CHECK(p.clean_optical.shape() == Shape{24, 14, 14, 10});
    }
  }

  TEST_CASE("dataset cover mixes") {
    synth::DatasetConfig dc;
    dc.count = 20;
    dc.mix = synth::CoverMix::low;
    for (const auto& p : synth::generate_dataset(dc)) CHECK(p.sample.cover <= 0.28);
    CHECK(synth::cover_mix_from_name("high") == synth::CoverMix::high);
    CHECK_THROWS_AS(synth::cover_mix_from_name("sideways"), ConfigError);
  }
}

TEST_SUITE("baseline") {
  TEST_CASE("separable rows are classified") {
    Rng rng(1);
    Eigen::MatrixXd x(400, 3);
    std::vector<std::uint8_t> y(400);
    for (int i = 0; i < 400; ++i) {
      y[std::size_t(i)] = i % 4 == 0 ? 1 : 0;
      x(i, 0) = (y[std::size_t(i)] ? 2.0 : -2.0) + rng.normal(0.0, 0.5);
      x(i, 1) = rng.normal();
      x(i, 2) = 100.0 + 50.0 * rng.normal();
    }
    const auto m = LogisticBaseline::fit(x, y);
    const Eigen::VectorXd p = m.predict_rows(x);
    int correct = 0;
    for (int i = 0; i < 400; ++i) {
      CHECK(p(i) >= 0.0);
      CHECK(p(i) <= 1.0);
      correct += (p(i) >= 0.5) == (y[std::size_t(i)] != 0) ? 1 : 0;
    }
    CHECK(correct >= 396);
    CHECK(m.predict_rows(x) == p);
  }

  TEST_CASE("baseline needs both classes") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 2);
    CHECK_THROWS_AS(LogisticBaseline::fit(x, std::vector<std::uint8_t>(10, 1)), DataError);
    CHECK_THROWS_AS(LogisticBaseline::fit(x, std::vector<std::uint8_t>(9, 1)), ShapeError);
  }

  TEST_CASE("baseline on plots") {
    synth::DatasetConfig dc;
    dc.count = 6;
    dc.seed = 8;
    std::vector<PlotSample> data;
    for (auto& p : synth::generate_dataset(dc)) data.push_back(p.sample);
    const auto m = LogisticBaseline::fit(data);
    const Tensor p = m.predict(data[0].stack);
    CHECK(p.shape() == Shape{14, 14});
    CHECK(m.threshold() > 0.0);
    CHECK(m.threshold() < 1.0);
    const auto f = temporal_mean_features(data[0].stack);
    CHECK(f.rows() == 196);
    CHECK(f.cols() == kNumChannels);
  }
}
