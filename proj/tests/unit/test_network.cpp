#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/oracles.hpp"
#include "tof/network.hpp"
#include "tof/nn/layers.hpp"

using namespace tof;

namespace {

NetConfig small_config() {
  NetConfig c;
  c.hidden_per_direction = 8;
  c.fpa_width = 8;
  c.conv_block_width = 8;
  return c;
}

Tensor random_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor x({h, w, c});
  for (auto& v : x.storage()) v = scale * rng.normal();
  return x;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double weighted_sum(const Tensor& x, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i];
  return s;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

/// Copies every tensor under prefix `from` onto the same-named tensor under `to`.
void copy_prefix(nn::ParamStore& p, const std::string& from, const std::string& to, const nn::ParamStore& src) {
  for (const auto& e : src.entries()) {
    if (e.name.rfind(from, 0) != 0) continue;
    const auto target = p.id(to + e.name.substr(from.size()));
    const auto v = src.values(src.id(e.name));
    std::copy(v.begin(), v.end(), p.values(target).begin());
  }
}

Tensor reverse_time(const Tensor& x) {
  Tensor r(x.shape());
  const std::size_t t_len = x.dim(0), step = x.size() / t_len;
  for (std::size_t t = 0; t < t_len; ++t) {
    std::copy_n(x.data() + (t_len - 1 - t) * step, step, r.data() + t * step);
  }
  return r;
}

std::size_t reflect_index(long i, long n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("gru cell is deterministic and keeps its shape") {
    const Network net(small_config(), 3);
    Rng rng(1);
    const Tensor x = random_map(9, 7, kNumChannels, rng);
    const Tensor h = random_map(9, 7, 8, rng, 0.5);
    ForwardOptions train;
    train.mode = Mode::train;
    train.noise_seed = 4;
    for (int d = 0; d < 2; ++d) {
      const Tensor a = net.gru_cell(d, x, h, train, 11);
      const Tensor b = net.gru_cell(d, x, h, train, 11);
      CHECK(a.shape() == Shape{9, 7, 8});
      CHECK(a.storage() == b.storage());
      const Tensor e1 = net.gru_cell(d, x, h, ForwardOptions{});
      const Tensor e2 = net.gru_cell(d, x, h, ForwardOptions{});
      CHECK(e1.storage() == e2.storage());
    }
  }

  TEST_CASE("zoneout probability 1 returns the previous state exactly") {
    const Network net(small_config(), 5);
    Rng rng(2);
    const Tensor x = random_map(8, 8, kNumChannels, rng);
    const Tensor h = random_map(8, 8, 8, rng);
    for (Mode mode : {Mode::train, Mode::eval}) {
      ForwardOptions o;
      o.mode = mode;
      o.zoneout_override = 1.0;
      CHECK(net.gru_cell(0, x, h, o, 99).storage() == h.storage());
    }
  }

  TEST_CASE("gru cell analytic gradient matches finite differences") {
    Network net(small_config(), 6);
    Rng rng(3);
    const Tensor x = random_map(8, 8, kNumChannels, rng);
    const Tensor h = random_map(8, 8, 8, rng, 0.5);
    const Tensor dh = random_map(8, 8, 8, rng);
    ForwardOptions o;  // eval: zoneout enters as its expectation
    const int d = 1;
    nn::Gradients grads(net.params());
    const auto g = net.gru_cell_backward(d, x, h, dh, o, grads);
    CHECK(g.h.storage() == net.gru_cell(d, x, h, o).storage());
    const double step = 1e-6;
    auto loss = [&](const Tensor& xx, const Tensor& hh) { return weighted_sum(net.gru_cell(d, xx, hh, o), dh); };

    double worst = 0.0;
    for (std::size_t i : {std::size_t{0}, std::size_t{37}, x.size() / 2, x.size() - 1}) {
      Tensor xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      worst = std::max(worst, rel_err(g.dx[i], (loss(xp, h) - loss(xm, h)) / (2 * step)));
    }
    for (std::size_t i : {std::size_t{0}, std::size_t{101}, h.size() - 1}) {
      Tensor hp = h, hm = h;
      hp[i] += step;
      hm[i] -= step;
      worst = std::max(worst, rel_err(g.dh_prev[i], (loss(x, hp) - loss(x, hm)) / (2 * step)));
    }
    auto& params = net.params();
    for (const auto& e : params.entries()) {
      if (e.name.rfind("enc.bwd", 0) != 0) continue;
      auto v = params.values(params.id(e.name));
      const double* gv = grads.data(params.id(e.name));
      std::size_t k = 0;
      for (std::size_t j = 1; j < v.size(); ++j) {
        if (std::abs(gv[j]) > std::abs(gv[k])) k = j;
      }
      const double keep = v[k];
      v[k] = keep + step;
      const double up = loss(x, h);
      v[k] = keep - step;
      const double down = loss(x, h);
      v[k] = keep;
      const double r = rel_err(gv[k], (up - down) / (2 * step));
      INFO(e.name);
      CHECK(r < 1e-4);
      worst = std::max(worst, r);
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("encoder directions are mirror images") {
    const Network net(small_config(), 7);
    nn::ParamStore swapped = net.params();
    copy_prefix(swapped, "enc.fwd", "enc.bwd", net.params());
    copy_prefix(swapped, "enc.bwd", "enc.fwd", net.params());
    const Network mirror(small_config(), swapped);
    Rng rng(4);
    const Tensor x = oracle::random_input(5, 8, 9, kNumChannels, rng);
    const Tensor a = net.encode(x, ForwardOptions{});
    const Tensor b = mirror.encode(reverse_time(x), ForwardOptions{});
    CHECK(a.shape() == Shape{8, 9, 16});
    CHECK(max_abs_diff(nn::slice_channels(a, 0, 8), nn::slice_channels(b, 8, 8)) == 0.0);
    CHECK(max_abs_diff(nn::slice_channels(a, 8, 8), nn::slice_channels(b, 0, 8)) == 0.0);
  }

  TEST_CASE("encoder output doubles the hidden width") {
    NetConfig c;
    c.hidden_per_direction = 32;
    c.fpa_width = 8;
    c.conv_block_width = 8;
    const Network net(c, 1);
    Rng rng(5);
    const Tensor out = net.encode(oracle::random_input(2, 8, 8, kNumChannels, rng), ForwardOptions{});
    CHECK(out.shape() == Shape{8, 8, 64});
  }

  TEST_CASE("constant series with shared direction weights gives equal halves") {
    const Network net(small_config(), 8);
    nn::ParamStore shared = net.params();
    copy_prefix(shared, "enc.fwd", "enc.bwd", net.params());
    const Network tied(small_config(), shared);
    Rng rng(6);
    const Tensor frame = oracle::random_input(1, 8, 8, kNumChannels, rng);
    Tensor x({4, 8, 8, std::size_t(kNumChannels)});
    for (std::size_t t = 0; t < 4; ++t) std::copy_n(frame.data(), frame.size(), x.data() + t * frame.size());
    const Tensor out = tied.encode(x, ForwardOptions{});
    CHECK(max_abs_diff(nn::slice_channels(out, 0, 8), nn::slice_channels(out, 8, 8)) == 0.0);
  }

  TEST_CASE("fpa keeps spatial dims") {
    const Network net(small_config(), 9);
    Rng rng(7);
    for (auto [h, w] : {std::pair{8, 8}, std::pair{14, 14}, std::pair{16, 16}, std::pair{9, 13}}) {
      const Tensor y = net.fpa_decode(random_map(std::size_t(h), std::size_t(w), 16, rng));
      CHECK(y.shape() == Shape{std::size_t(h), std::size_t(w), 8});
    }
    CHECK_THROWS_AS(net.fpa_decode(random_map(7, 12, 16, rng)), ShapeError);
  }

  TEST_CASE("fpa with zero attention reduces to the global pooling branch") {
    Network net(small_config(), 10);
    auto& p = net.params();
    for (const char* name : {"fpa.attention.kernel", "fpa.attention.bias"}) {
      for (auto& v : p.values(p.id(name))) v = 0.0;
    }
    auto gb = p.values(p.id("fpa.gap.bias"));
    for (std::size_t j = 0; j < gb.size(); ++j) gb[j] = 0.1 * static_cast<double>(j);
    Rng rng(8);
    const Tensor x = random_map(12, 10, 16, rng);
    const Tensor y = net.fpa_decode(x);
    std::vector<double> mean(16, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) mean[i % 16] += x[i] / 120.0;
    const auto gk = p.values(p.id("fpa.gap.kernel"));
    double worst = 0.0;
    for (std::size_t pix = 0; pix < 120; ++pix) {
      for (std::size_t j = 0; j < 8; ++j) {
        double expect = gb[j];
        for (std::size_t k = 0; k < 16; ++k) expect += mean[k] * gk[k * 8 + j];
        worst = std::max(worst, std::abs(y[pix * 8 + j] - expect));
      }
    }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("fpa local receptive field") {
    Network net(small_config(), 11);
    auto& p = net.params();
    for (auto& v : p.values(p.id("fpa.gap.kernel"))) v = 0.0;
    Rng rng(9);
    const Tensor x = random_map(64, 64, 16, rng);
    Tensor bumped = x;
    for (std::size_t k = 0; k < 16; ++k) bumped(32, 32, k) += 5.0;
    const Tensor a = net.fpa_decode(x);
    const Tensor b = net.fpa_decode(bumped);
    auto changed = [&](std::size_t y, std::size_t xx) {
      double m = 0.0;
      for (std::size_t k = 0; k < 8; ++k) m = std::max(m, std::abs(a(y, xx, k) - b(y, xx, k)));
      return m > 0.0;
    };
    CHECK(changed(32, 47));
    CHECK(changed(47, 32));
    CHECK_FALSE(changed(32, 62));
    CHECK_FALSE(changed(62, 32));
    CHECK_FALSE(changed(2, 32));
  }

  TEST_CASE("conv block: eval with running stats equal to batch stats matches train") {
    Network net(small_config(), 12);
    Rng rng(10);
    std::vector<Tensor> xs;
    for (int i = 0; i < 3; ++i) xs.push_back(random_map(8, 9, 8, rng));
    // Batch moments of the block's convolution output, two-pass.
    auto& p = net.params();
    std::vector<Tensor> pre;
    for (const auto& x : xs) pre.push_back(nn::conv2d(x, p.data(p.id("block1.conv.kernel")), nullptr, 3, 8));
    std::vector<double> mean(8, 0.0), var(8, 0.0);
    double count = 0.0;
    for (const auto& a : pre) {
      for (std::size_t i = 0; i < a.size(); ++i) mean[i % 8] += a[i];
      count += static_cast<double>(a.size() / 8);
    }
    for (auto& m : mean) m /= count;
    for (const auto& a : pre) {
      for (std::size_t i = 0; i < a.size(); ++i) var[i % 8] += (a[i] - mean[i % 8]) * (a[i] - mean[i % 8]);
    }
    for (auto& v : var) v /= count;

    ForwardOptions train;
    train.mode = Mode::train;
    const auto t_out = net.conv_block(0, xs, train);
    std::copy(mean.begin(), mean.end(), p.values(p.id("block1.renorm.running_mean")).begin());
    std::copy(var.begin(), var.end(), p.values(p.id("block1.renorm.running_var")).begin());
    const auto e_out = net.conv_block(0, xs, ForwardOptions{});
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(max_abs_diff(t_out[i], e_out[i]) < 1e-10);
  }

  TEST_CASE("conv block with neutral gates is relu of the normalized convolution") {
    const Network net(small_config(), 13);
    Rng rng(11);
    const Tensor x = random_map(8, 8, 8, rng);
    ForwardOptions o;
    o.neutral_se = true;
    const Tensor y = net.conv_block(1, {x}, o).front();
    const auto& p = net.params();
    const Tensor a = nn::conv2d(x, p.data(p.id("block2.conv.kernel")), nullptr, 3, 8);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, std::abs(y[i] - std::max(a[i] / std::sqrt(1.0 + 1e-3), 0.0)));
    }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("dropblock masks only when enabled") {
    const Network net(small_config(), 14);
    Rng rng(12);
    const std::vector<Tensor> xs = {random_map(16, 16, 8, rng), random_map(16, 16, 8, rng)};
    ForwardOptions a;
    a.mode = Mode::train;
    a.noise_seed = 1;
    ForwardOptions b = a;
    b.noise_seed = 2;
    const auto ya = net.conv_block(0, xs, a);
    const auto yb = net.conv_block(0, xs, b);
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(ya[i].storage() == yb[i].storage());
    a.dropblock_prob = b.dropblock_prob = 0.2;
    const auto da = net.conv_block(0, xs, a);
    const auto db = net.conv_block(0, xs, b);
    CHECK(da[0].storage() != db[0].storage());
    CHECK(da[0].storage() == net.conv_block(0, xs, a)[0].storage());
  }

  TEST_CASE("forward probabilities lie in (0, 1) and start near the prior") {
    const Network net(NetConfig{}, 15);
    Rng rng(13);
    double sum = 0.0;
    std::size_t n = 0;
    for (int i = 0; i < 100; ++i) {
      const Tensor p = net.predict(oracle::random_input(2, 8, 8, kNumChannels, rng));
      CHECK(p.shape() == Shape{8, 8});
      for (double v : p.storage()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        sum += v;
        ++n;
      }
    }
    CHECK(std::abs(sum / static_cast<double>(n) - 0.01) <= 0.005);
  }

  TEST_CASE("initialization is a function of the seed") {
    const NetConfig c = small_config();
    CHECK(Network(c, 21).params() == Network(c, 21).params());
    CHECK_FALSE(Network(c, 21).params() == Network(c, 22).params());
    Rng rng(14);
    const Tensor x = oracle::random_input(3, 8, 8, kNumChannels, rng);
    CHECK(Network(c, 21).predict(x).storage() == Network(c, 21).predict(x).storage());
  }

  TEST_CASE("parameter count") {
    NetConfig c = small_config();
    CHECK(Network(c, 0).param_count() == Network::param_count(c));
    NetConfig wide = c;
    wide.conv_block_width *= 2;
    CHECK(Network::param_count(wide) > Network::param_count(c));
    // Head: one weight per hypercolumn channel plus a bias.
    const Network net(c, 0);
    const auto& p = net.params();
    CHECK(p.info(p.id("head.kernel")).count == 2 * 8 + 8 + 2 * 8);
    CHECK(p.info(p.id("head.bias")).count == 1);
    NetConfig bad = c;
    bad.hidden_per_direction = 0;
    CHECK_THROWS_AS(Network::param_count(bad), ConfigError);
    CHECK_THROWS_AS(Network(bad, 0), ConfigError);
  }

  TEST_CASE("reflect padding and same convolution") {
    Rng rng(15);
    const Tensor x = random_map(5, 6, 3, rng);
    const Tensor padded = nn::reflect_pad(x, 2, 1, 1, 2);
    CHECK(padded.shape() == Shape{8, 9, 3});
    for (long y = 0; y < 8; ++y) {
      for (long xx = 0; xx < 9; ++xx) {
        for (std::size_t k = 0; k < 3; ++k) {
          CHECK(padded(std::size_t(y), std::size_t(xx), k) == x(reflect_index(y - 2, 5), reflect_index(xx - 1, 6), k));
        }
      }
    }
    // 3x3 conv with reflect padding against a direct sum over mirrored indices.
    std::vector<double> wts(3 * 3 * 3 * 2), bias = {0.3, -0.2};
    for (auto& v : wts) v = rng.normal();
    const Tensor y = nn::conv2d(x, wts.data(), bias.data(), 3, 2);
    double worst = 0.0;
    for (long i = 0; i < 5; ++i) {
      for (long j = 0; j < 6; ++j) {
        for (std::size_t o = 0; o < 2; ++o) {
          double s = bias[o];
          for (long a = 0; a < 3; ++a) {
            for (long b = 0; b < 3; ++b) {
              for (std::size_t k = 0; k < 3; ++k) {
                s += wts[((std::size_t(a) * 3 + std::size_t(b)) * 3 + k) * 2 + o] *
                     x(reflect_index(i + a - 1, 5), reflect_index(j + b - 1, 6), k);
              }
            }
          }
          worst = std::max(worst, std::abs(s - y(std::size_t(i), std::size_t(j), o)));
        }
      }
    }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("activations stay finite and bad input is reported") {
    const Network net(small_config(), 16);
    Tensor big({2, 8, 8, std::size_t(kNumChannels)});
    big.fill(1e3);
    const Tensor out = net.predict(big);
    for (double v : out.storage()) CHECK(std::isfinite(v));
    Tensor bad = big;
    bad[5] = std::nan("");
    CHECK_THROWS_AS(net.predict(bad), NumericError);
    CHECK_THROWS_AS(net.predict(Tensor({2, 8, 8, 3})), ShapeError);
  }
}
