#include <doctest.h>

#include <filesystem>

#include "support/oracles.hpp"
#include "tof/io.hpp"
#include "tof/raster.hpp"

using namespace tof;
namespace fs = std::filesystem;

namespace {

struct Parts {
  FloatArray s2, s1, ind, slope;
};

Parts random_parts(std::size_t t, std::size_t h, std::size_t w, Rng& rng) {
  Parts p{FloatArray({t, h, w, 10}), FloatArray({t, h, w, 2}), FloatArray({t, h, w, 3}), FloatArray({h, w})};
  for (auto* a : {&p.s2, &p.s1, &p.ind, &p.slope}) {
    for (auto& v : a->storage()) v = static_cast<float>(rng.uniform());
  }
  return p;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("tof_unit_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("raster") {
  TEST_CASE("channel layout is fixed") {
    CHECK(kChannelNames.size() == 16);
    CHECK(channel_name(Channel::B2) == "B2");
    CHECK(channel_index(Channel::EVI) == 10);
    CHECK(channel_index(Channel::VV) == 13);
    CHECK(channel_index(Channel::SLOPE) == 15);
    for (std::size_t i = 0; i < kChannelNames.size(); ++i) {
      auto c = channel_from_name(kChannelNames[i]);
      REQUIRE(c);
      CHECK(channel_index(*c) == static_cast<int>(i));
    }
    CHECK_FALSE(channel_from_name("B1"));
    CHECK(is_optical(Channel::B12));
    CHECK_FALSE(is_optical(Channel::EVI));
  }

  TEST_CASE("step days are 1, 16, ..., 346") {
    const auto d = step_days();
    REQUIRE(d.size() == 24);
    CHECK(d.front() == 1);
    CHECK(d[1] == 16);
    CHECK(d.back() == 346);
  }

  TEST_CASE("build_stack composes channels and replicates slope") {
    Rng rng(1);
    auto p = random_parts(24, 14, 14, rng);
    p.slope.fill(0.1f);
    const auto s = build_stack(p.s2, p.s1, p.ind, p.slope, step_days(), "a");
    CHECK(s.data().shape() == Shape{24, 14, 14, 16});
    for (std::size_t t = 0; t < 24; ++t) CHECK(s.at(t, 3, 4, Channel::SLOPE) == 0.1f);
    CHECK(s.at(5, 2, 3, Channel::B5) == p.s2(5, 2, 3, 3));
    CHECK(s.at(5, 2, 3, Channel::MSAVI2) == p.ind(5, 2, 3, 1));
    CHECK(s.at(5, 2, 3, Channel::VH) == p.s1(5, 2, 3, 1));
  }

  TEST_CASE("build_stack rejects inconsistent inputs") {
    Rng rng(2);
    auto p = random_parts(24, 14, 14, rng);
    FloatArray s1_short({12, 14, 14, 2});
    CHECK_THROWS_AS(build_stack(p.s2, s1_short, p.ind, p.slope, step_days(), "a"), ShapeError);
    try {
      build_stack(p.s2, s1_short, p.ind, p.slope, step_days(), "a");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("s1") != std::string::npos);
    }
    auto q = random_parts(12, 14, 14, rng);
    CHECK_THROWS_AS(build_stack(q.s2, q.s1, q.ind, q.slope, step_days(), "a"), ShapeError);
    FloatArray slope_bad({13, 14});
    CHECK_THROWS_AS(build_stack(p.s2, p.s1, p.ind, slope_bad, step_days(), "a"), ShapeError);
  }

  TEST_CASE("stack invariants are enforced") {
    Rng rng(3);
    auto p = random_parts(24, 14, 14, rng);
    auto bad_days = step_days();
    bad_days[3] += 1;
    CHECK_THROWS_AS(build_stack(p.s2, p.s1, p.ind, p.slope, bad_days, "a"), DataError);
    p.s2(0, 0, 0, 0) = 1.5f;
    CHECK_THROWS_AS(build_stack(p.s2, p.s1, p.ind, p.slope, step_days(), "a"), DataError);
  }

  TEST_CASE("normalization examples") {
    CHECK(normalize_reflectance(4000) == doctest::Approx(0.4));
    CHECK(normalize_backscatter(-12.5) == doctest::Approx(0.5));
    CHECK(normalize_slope(150) == 1.0);
    CHECK(normalize_reflectance(-5) == 0.0);
    CHECK(normalize_index(0.0) == doctest::Approx(0.5));
    CHECK(normalize_index(-3.0) == 0.0);
    FloatArray bad({2});
    bad[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(normalize_s2(bad), DataError);
    CHECK_THROWS_AS(normalize_s1(bad), DataError);
  }

  TEST_CASE("normalization round-trips and clamp is idempotent") {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
      const double u = rng.uniform();
      CHECK(normalize_reflectance(denormalize_reflectance(u)) == doctest::Approx(u).epsilon(1e-12));
      CHECK(normalize_backscatter(denormalize_backscatter(u)) == doctest::Approx(u).epsilon(1e-12));
    }
    FloatArray a({50});
    for (auto& v : a.storage()) v = static_cast<float>(rng.uniform(-0.5, 1.5));
    const auto once = clamp_unit(a);
    CHECK(clamp_unit(once) == once);
    FloatArray unit({50});
    for (auto& v : unit.storage()) v = static_cast<float>(rng.uniform());
    CHECK(clamp_unit(unit) == unit);
  }

  TEST_CASE("labels and predictions validate their contents") {
    ByteArray g({14, 14});
    for (std::size_t i = 0; i < 49; ++i) g[i] = 1;
    const LabelGrid l(g);
    CHECK(l.positives() == 49);
    CHECK(l.cover() == doctest::Approx(0.25));
    g[0] = 2;
    CHECK_THROWS_AS(LabelGrid{g}, DataError);
    Tensor p({2, 2});
    p[0] = 1.2;
    CHECK_THROWS_AS(PredictionGrid{p}, DataError);
  }

  TEST_CASE("time stride keeps every n-th step") {
    Rng rng(5);
    auto p = random_parts(24, 14, 14, rng);
    const auto s = build_stack(p.s2, p.s1, p.ind, p.slope, step_days(), "a");
    const Tensor x = s.to_input(2);
    CHECK(x.dim(0) == 12);
    CHECK(x(3, 1, 2, 4) == static_cast<double>(s.at(6, 1, 2, Channel::B6)));
    CHECK_THROWS_AS(s.to_input(5), ConfigError);
  }
}

TEST_SUITE("io") {
  TEST_CASE("plot bundle round-trip is bit-identical") {
    Rng rng(6);
    auto p = random_parts(24, 14, 14, rng);
    const auto s = build_stack(p.s2, p.s1, p.ind, p.slope, step_days(), "plot_a");
    const LabelGrid label(oracle::random_grid(14, 14, 0.3, rng));
    const auto dir = scratch("bundle");
    io::write_plot_bundle(dir, {s, label, 1.5, -2.5, {}});
    const auto back = io::read_plot_bundle(dir);
    CHECK(back.stack == s);
    REQUIRE(back.label);
    CHECK(*back.label == label);
    CHECK(back.lat == 1.5);
    CHECK(back.stack.plot_id() == "plot_a");

    fs::remove(dir / "indices.bin");
    const auto derived = io::read_plot_bundle(dir);
    CHECK(derived.stack.data().shape() == s.data().shape());
  }

  TEST_CASE("binary CSV and float files") {
    Rng rng(7);
    const auto dir = scratch("csv");
    fs::create_directories(dir);
    const auto g = oracle::random_grid(5, 7, 0.5, rng);
    io::write_binary_csv(dir / "g.csv", g);
    CHECK(io::read_binary_csv(dir / "g.csv") == g);
    io::write_text(dir / "bad.csv", "0,1\n1,2\n");
    CHECK_THROWS_AS(io::read_binary_csv(dir / "bad.csv"), IoError);
    io::write_text(dir / "ragged.csv", "0,1\n1\n");
    CHECK_THROWS_AS(io::read_binary_csv(dir / "ragged.csv"), IoError);
    std::vector<float> v = {1.0f, -2.5f, 3.25f};
    io::write_f32(dir / "v.bin", v);
    CHECK(io::read_f32(dir / "v.bin") == v);
    CHECK(fs::file_size(dir / "v.bin") == 12);
    CHECK_THROWS_AS(io::read_f32(dir / "missing.bin"), IoError);
  }

  TEST_CASE("dataset listing") {
    Rng rng(8);
    const auto root = scratch("dataset");
    for (const char* id : {"b", "a"}) {
      auto p = random_parts(24, 14, 14, rng);
      io::write_plot_bundle(root / id, {build_stack(p.s2, p.s1, p.ind, p.slope, step_days(), id),
                                        LabelGrid(oracle::random_grid(14, 14, 0.3, rng)), 0, 0, {}});
    }
    const auto found = io::list_bundles(root);
    REQUIRE(found.size() == 2);
    CHECK(found[0].filename() == "a");
    const auto data = io::load_dataset(root);
    CHECK(data[1].stack.plot_id() == "b");
    CHECK_THROWS_AS(io::load_dataset(root / "nope"), IoError);
  }
}
