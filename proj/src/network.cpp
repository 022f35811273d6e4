#include "tof/network.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tof/nn/layers.hpp"

namespace tof {

using nn::Gradients;
using nn::ParamStore;

void NetConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  auto probability = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  positive(input_channels, "input_channels");
  positive(hidden_per_direction, "hidden_per_direction");
  positive(fpa_width, "fpa_width");
  positive(conv_block_width, "conv_block_width");
  positive(dropblock_block, "dropblock_block");
  probability(zoneout_prob, "zoneout_prob");
  probability(dropblock_max, "dropblock_max");
  if (!(head_prior > 0.0 && head_prior < 1.0)) throw ConfigError("head_prior must lie in (0, 1)");
  probability(renorm_momentum, "renorm_momentum");
  if (!(renorm_eps > 0.0) || !(layer_norm_eps > 0.0)) throw ConfigError("eps values must be > 0");
  if (!(head_init_std >= 0.0)) throw ConfigError("head_init_std must be >= 0");
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"input_channels", c.input_channels},
       {"hidden_per_direction", c.hidden_per_direction},
       {"fpa_width", c.fpa_width},
       {"conv_block_width", c.conv_block_width},
       {"zoneout_prob", c.zoneout_prob},
       {"dropblock_max", c.dropblock_max},
       {"dropblock_block", c.dropblock_block},
       {"head_prior", c.head_prior},
       {"head_init_std", c.head_init_std},
       {"renorm_momentum", c.renorm_momentum},
       {"renorm_eps", c.renorm_eps},
       {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  const NetConfig d;
  c.input_channels = j.value("input_channels", d.input_channels);
  c.hidden_per_direction = j.value("hidden_per_direction", d.hidden_per_direction);
  c.fpa_width = j.value("fpa_width", d.fpa_width);
  c.conv_block_width = j.value("conv_block_width", d.conv_block_width);
  c.zoneout_prob = j.value("zoneout_prob", d.zoneout_prob);
  c.dropblock_max = j.value("dropblock_max", d.dropblock_max);
  c.dropblock_block = j.value("dropblock_block", d.dropblock_block);
  c.head_prior = j.value("head_prior", d.head_prior);
  c.head_init_std = j.value("head_init_std", d.head_init_std);
  c.renorm_momentum = j.value("renorm_momentum", d.renorm_momentum);
  c.renorm_eps = j.value("renorm_eps", d.renorm_eps);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
}

namespace {

constexpr const char* kDirection[2] = {"enc.fwd", "enc.bwd"};
constexpr const char* kBlock[2] = {"block1", "block2"};

std::size_t u(int v) { return static_cast<std::size_t>(v); }
std::size_t cse_hidden(const NetConfig& c) { return std::max<std::size_t>(1, u(c.conv_block_width) / 2); }
std::size_t hyper_width(const NetConfig& c) {
  return u(2 * c.hidden_per_direction + c.fpa_width + 2 * c.conv_block_width);
}

enum class InitKind { zeros, ones, glorot, he, head_weight, head_bias };

struct InitRule {
  InitKind kind = InitKind::zeros;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

/// Builds the parameter layout in its canonical order with one init rule per tensor.
ParamStore make_layout(const NetConfig& c, std::vector<InitRule>* rules) {
  c.validate();
  ParamStore p;
  auto add = [&](const std::string& name, Shape shape, InitRule rule, bool learnable = true) {
    p.add(name, std::move(shape), learnable);
    if (rules) rules->push_back(rule);
  };
  const std::size_t cx = u(c.input_channels), hd = u(c.hidden_per_direction);
  const std::size_t f = u(c.fpa_width), cb = u(c.conv_block_width), ch = cse_hidden(c);
  for (const char* d : kDirection) {
    const std::string s = d;
    add(s + ".gate.kernel", {3, 3, cx + hd, 2 * hd}, {InitKind::glorot, 9 * (cx + hd), 9 * 2 * hd});
    for (const char* g : {".gate_z", ".gate_r"}) {
      add(s + g + ".ln.gain", {hd}, {InitKind::ones});
      add(s + g + ".ln.offset", {hd}, {InitKind::zeros});
      add(s + g + ".sse.kernel", {1, 1, hd, 1}, {InitKind::glorot, hd, 1});
      add(s + g + ".sse.bias", {1}, {InitKind::zeros});
    }
    add(s + ".candidate.kernel", {3, 3, cx + hd, hd}, {InitKind::glorot, 9 * (cx + hd), 9 * hd});
    add(s + ".candidate.ln.gain", {hd}, {InitKind::ones});
    add(s + ".candidate.ln.offset", {hd}, {InitKind::zeros});
  }
  const std::size_t e = 2 * hd;
  add("fpa.master.kernel", {1, 1, e, f}, {InitKind::glorot, e, f});
  add("fpa.master.bias", {f}, {InitKind::zeros});
  add("fpa.gap.kernel", {1, 1, e, f}, {InitKind::glorot, e, f});
  add("fpa.gap.bias", {f}, {InitKind::zeros});
  const std::size_t down_k[3] = {7, 5, 3};
  for (int i = 0; i < 3; ++i) {
    const std::string s = "fpa.down" + std::to_string(i + 1);
    const std::size_t k = down_k[i];
    add(s + ".kernel", {k, k, f, f}, {InitKind::glorot, k * k * f, k * k * f});
    add(s + ".bias", {f}, {InitKind::zeros});
  }
  for (const char* s : {"fpa.up2", "fpa.up1", "fpa.attention"}) {
    add(std::string(s) + ".kernel", {3, 3, f, f}, {InitKind::glorot, 9 * f, 9 * f});
    add(std::string(s) + ".bias", {f}, {InitKind::zeros});
  }
  for (int b = 0; b < 2; ++b) {
    const std::string s = kBlock[b];
    const std::size_t cin = b == 0 ? f : cb;
    add(s + ".conv.kernel", {3, 3, cin, cb}, {InitKind::he, 9 * cin});
    add(s + ".renorm.gamma", {cb}, {InitKind::ones});
    add(s + ".renorm.beta", {cb}, {InitKind::zeros});
    add(s + ".renorm.running_mean", {cb}, {InitKind::zeros}, false);
    add(s + ".renorm.running_var", {cb}, {InitKind::ones}, false);
    add(s + ".cse.fc1.kernel", {cb, ch}, {InitKind::glorot, cb, ch});
    add(s + ".cse.fc1.bias", {ch}, {InitKind::zeros});
    add(s + ".cse.fc2.kernel", {ch, cb}, {InitKind::glorot, ch, cb});
    add(s + ".cse.fc2.bias", {cb}, {InitKind::zeros});
    add(s + ".sse.kernel", {1, 1, cb, 1}, {InitKind::glorot, cb, 1});
    add(s + ".sse.bias", {1}, {InitKind::zeros});
  }
  add("head.kernel", {1, 1, hyper_width(c), 1}, {InitKind::head_weight});
  add("head.bias", {1}, {InitKind::head_bias});
  return p;
}

struct GruIds {
  std::size_t gate_k, cand_k;
  std::size_t ln_gain[3], ln_off[3];  // z, r, candidate
  std::size_t se_w[2], se_b[2];       // z, r
};

struct BlockIds {
  std::size_t conv_k, gamma, beta, run_mean, run_var, fc1_k, fc1_b, fc2_k, fc2_b, sse_k, sse_b;
};

struct Ids {
  GruIds gru[2];
  std::size_t master_k, master_b, gap_k, gap_b;
  std::size_t down_k[3], down_b[3];
  std::size_t up2_k, up2_b, up1_k, up1_b, att_k, att_b;
  BlockIds block[2];
  std::size_t head_k, head_b;
};

Ids resolve(const ParamStore& p) {
  Ids ids{};
  for (int d = 0; d < 2; ++d) {
    const std::string s = kDirection[d];
    auto& g = ids.gru[d];
    g.gate_k = p.id(s + ".gate.kernel");
    g.cand_k = p.id(s + ".candidate.kernel");
    const char* gates[2] = {".gate_z", ".gate_r"};
    for (int k = 0; k < 2; ++k) {
      g.ln_gain[k] = p.id(s + gates[k] + ".ln.gain");
      g.ln_off[k] = p.id(s + gates[k] + ".ln.offset");
      g.se_w[k] = p.id(s + gates[k] + ".sse.kernel");
      g.se_b[k] = p.id(s + gates[k] + ".sse.bias");
    }
    g.ln_gain[2] = p.id(s + ".candidate.ln.gain");
    g.ln_off[2] = p.id(s + ".candidate.ln.offset");
  }
  ids.master_k = p.id("fpa.master.kernel");
  ids.master_b = p.id("fpa.master.bias");
  ids.gap_k = p.id("fpa.gap.kernel");
  ids.gap_b = p.id("fpa.gap.bias");
  for (int i = 0; i < 3; ++i) {
    ids.down_k[i] = p.id("fpa.down" + std::to_string(i + 1) + ".kernel");
    ids.down_b[i] = p.id("fpa.down" + std::to_string(i + 1) + ".bias");
  }
  ids.up2_k = p.id("fpa.up2.kernel");
  ids.up2_b = p.id("fpa.up2.bias");
  ids.up1_k = p.id("fpa.up1.kernel");
  ids.up1_b = p.id("fpa.up1.bias");
  ids.att_k = p.id("fpa.attention.kernel");
  ids.att_b = p.id("fpa.attention.bias");
  for (int b = 0; b < 2; ++b) {
    const std::string s = kBlock[b];
    auto& k = ids.block[b];
    k.conv_k = p.id(s + ".conv.kernel");
    k.gamma = p.id(s + ".renorm.gamma");
    k.beta = p.id(s + ".renorm.beta");
    k.run_mean = p.id(s + ".renorm.running_mean");
    k.run_var = p.id(s + ".renorm.running_var");
    k.fc1_k = p.id(s + ".cse.fc1.kernel");
    k.fc1_b = p.id(s + ".cse.fc1.bias");
    k.fc2_k = p.id(s + ".cse.fc2.kernel");
    k.fc2_b = p.id(s + ".cse.fc2.bias");
    k.sse_k = p.id(s + ".sse.kernel");
    k.sse_b = p.id(s + ".sse.bias");
  }
  ids.head_k = p.id("head.kernel");
  ids.head_b = p.id("head.bias");
  return ids;
}

/// Runs fn(i) for i in [0, n), possibly in parallel; rethrows the first error.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::exception_ptr error;
  std::mutex m;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(m);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

Tensor time_slice(const Tensor& input, std::size_t t) {
  const std::size_t h = input.dim(1), w = input.dim(2), c = input.dim(3);
  Tensor x({h, w, c});
  std::copy_n(input.data() + t * h * w * c, h * w * c, x.data());
  return x;
}

Tensor apply(const Tensor& x, double (*f)(double)) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

double tanh_fn(double v) { return std::tanh(v); }

}  // namespace

struct Network::Impl {
  const NetConfig& cfg;
  const ParamStore& P;
  Ids ids;
  std::size_t cx, hd, f, cb, ch;

  Impl(const NetConfig& c, const ParamStore& p)
      : cfg(c), P(p), ids(resolve(p)), cx(u(c.input_channels)), hd(u(c.hidden_per_direction)),
        f(u(c.fpa_width)), cb(u(c.conv_block_width)), ch(cse_hidden(c)) {}

  const double* w(std::size_t id) const { return P.data(id); }

  // ---- convolutional GRU -------------------------------------------------

  struct StepCache {
    Tensor h_prev;
    Tensor xh;
    nn::LayerNormCache ln[3];
    Tensor z0, r0;
    std::vector<double> qz, qr;
    Tensor z, r;
    Tensor xrh;
    Tensor c;
    std::vector<std::uint8_t> keep;
  };

  double zoneout(const ForwardOptions& o) const { return o.zoneout_override.value_or(cfg.zoneout_prob); }

  /// z0 * q with q the gate's own spatial excitation.
  Tensor excite(const Tensor& g, std::size_t se_w, std::size_t se_b, const ForwardOptions& o,
                std::vector<double>& q) const {
    const std::size_t hw = g.dim(0) * g.dim(1), c = g.dim(2);
    if (o.neutral_se) {
      q.assign(hw, 1.0);
    } else {
      q = nn::spatial_gate(g, w(se_w), w(se_b));
    }
    Tensor out(g.shape());
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) out[p * c + k] = g[p * c + k] * q[p];
    }
    return out;
  }

  Tensor excite_backward(const Tensor& g, const std::vector<double>& q, const Tensor& dout,
                         std::size_t se_w, std::size_t se_b, const ForwardOptions& o,
                         Gradients& G) const {
    const std::size_t hw = g.dim(0) * g.dim(1), c = g.dim(2);
    Tensor dg(g.shape());
    std::vector<double> dq(hw, 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        dg[p * c + k] = dout[p * c + k] * q[p];
        dq[p] += dout[p * c + k] * g[p * c + k];
      }
    }
    if (!o.neutral_se) nn::spatial_gate_backward(g, q, dq, w(se_w), G.data(se_w), G.data(se_b), dg);
    return dg;
  }

  Tensor gru_step(int d, const Tensor& x, const Tensor& h, const ForwardOptions& o, Rng* rng,
                  StepCache& sc) const {
    const GruIds& id = ids.gru[d];
    const double eps = cfg.layer_norm_eps;
    sc.h_prev = h;
    sc.xh = nn::concat_channels({&x, &h});
    const Tensor g = nn::conv2d(sc.xh, w(id.gate_k), nullptr, 3, 2 * hd);
    const Tensor gz = nn::layer_norm(nn::slice_channels(g, 0, hd), w(id.ln_gain[0]), w(id.ln_off[0]), sc.ln[0], eps);
    const Tensor gr = nn::layer_norm(nn::slice_channels(g, hd, hd), w(id.ln_gain[1]), w(id.ln_off[1]), sc.ln[1], eps);
    sc.z0 = apply(gz, nn::sigmoid);
    sc.r0 = apply(gr, nn::sigmoid);
    sc.z = excite(sc.z0, id.se_w[0], id.se_b[0], o, sc.qz);
    sc.r = excite(sc.r0, id.se_w[1], id.se_b[1], o, sc.qr);
    Tensor rh(h.shape());
    for (std::size_t i = 0; i < h.size(); ++i) rh[i] = sc.r[i] * h[i];
    sc.xrh = nn::concat_channels({&x, &rh});
    const Tensor a = nn::conv2d(sc.xrh, w(id.cand_k), nullptr, 3, hd);
    sc.c = apply(nn::layer_norm(a, w(id.ln_gain[2]), w(id.ln_off[2]), sc.ln[2], eps), tanh_fn);

    const double p = zoneout(o);
    Tensor out(h.shape());
    if (o.mode == Mode::train) sc.keep.assign(h.size(), 0);
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double hn = (1.0 - sc.z[i]) * h[i] + sc.z[i] * sc.c[i];
      if (o.mode == Mode::train) {
        sc.keep[i] = rng->bernoulli(p) ? 1 : 0;
        out[i] = sc.keep[i] ? h[i] : hn;
      } else {
        out[i] = p == 1.0 ? h[i] : p * h[i] + (1.0 - p) * hn;
      }
    }
    return out;
  }

  /// Returns dL/dh_prev; accumulates parameter gradients and, when `dx`
  /// is given, dL/dx.
  Tensor gru_step_backward(int d, const StepCache& sc, const Tensor& dh, const ForwardOptions& o,
                           Gradients& G, Tensor* dx) const {
    const GruIds& id = ids.gru[d];
    const Tensor& h = sc.h_prev;
    const double p = zoneout(o);
    Tensor dh_prev(h.shape()), dz(h.shape()), dc(h.shape());
    for (std::size_t i = 0; i < h.size(); ++i) {
      double dhn;
      if (o.mode == Mode::train) {
        dh_prev[i] = sc.keep[i] ? dh[i] : 0.0;
        dhn = sc.keep[i] ? 0.0 : dh[i];
      } else {
        dh_prev[i] = p * dh[i];
        dhn = (1.0 - p) * dh[i];
      }
      dz[i] = dhn * (sc.c[i] - h[i]);
      dc[i] = dhn * sc.z[i] * (1.0 - sc.c[i] * sc.c[i]);
      dh_prev[i] += dhn * (1.0 - sc.z[i]);
    }
    const Tensor da = nn::layer_norm_backward(dc, sc.ln[2], w(id.ln_gain[2]), G.data(id.ln_gain[2]),
                                              G.data(id.ln_off[2]));
    Tensor dxrh(sc.xrh.shape());
    nn::conv2d_backward(sc.xrh, w(id.cand_k), 3, hd, 1, da, G.data(id.cand_k), nullptr, &dxrh);
    const Tensor drh = nn::slice_channels(dxrh, cx, hd);
    Tensor dr(h.shape());
    for (std::size_t i = 0; i < h.size(); ++i) {
      dr[i] = drh[i] * h[i];
      dh_prev[i] += drh[i] * sc.r[i];
    }
    Tensor dz0 = excite_backward(sc.z0, sc.qz, dz, id.se_w[0], id.se_b[0], o, G);
    Tensor dr0 = excite_backward(sc.r0, sc.qr, dr, id.se_w[1], id.se_b[1], o, G);
    for (std::size_t i = 0; i < h.size(); ++i) {
      dz0[i] *= sc.z0[i] * (1.0 - sc.z0[i]);
      dr0[i] *= sc.r0[i] * (1.0 - sc.r0[i]);
    }
    const Tensor dgz = nn::layer_norm_backward(dz0, sc.ln[0], w(id.ln_gain[0]), G.data(id.ln_gain[0]),
                                               G.data(id.ln_off[0]));
    const Tensor dgr = nn::layer_norm_backward(dr0, sc.ln[1], w(id.ln_gain[1]), G.data(id.ln_gain[1]),
                                               G.data(id.ln_off[1]));
    const Tensor dg = nn::concat_channels({&dgz, &dgr});
    Tensor dxh(sc.xh.shape());
    nn::conv2d_backward(sc.xh, w(id.gate_k), 3, 2 * hd, 1, dg, G.data(id.gate_k), nullptr, &dxh);
    nn::add_into_channels(dh_prev, nn::slice_channels(dxh, cx, hd), 0);
    if (dx != nullptr) {
      nn::add_into_channels(*dx, nn::slice_channels(dxh, 0, cx), 0);
      nn::add_into_channels(*dx, nn::slice_channels(dxrh, 0, cx), 0);
    }
    return dh_prev;
  }

  struct EncoderTape {
    std::vector<StepCache> steps[2];
  };

  Tensor encode(const Tensor& input, const ForwardOptions& o, std::uint64_t sample_seed,
                EncoderTape* tape) const {
    require_rank(input, 4, "input");
    if (input.dim(3) != cx) {
      throw ShapeError("input", "expected " + std::to_string(cx) + " channels, got " +
                                    shape_to_string(input.shape()));
    }
    if (input.dim(0) == 0) throw ShapeError("input", "no time steps");
    const std::size_t t_len = input.dim(0), hh = input.dim(1), ww = input.dim(2);
    Tensor finals[2];
    for (int d = 0; d < 2; ++d) {
      Rng rng(derive_seed(sample_seed, {1, static_cast<std::uint64_t>(d)}));
      Tensor h({hh, ww, hd});
      if (tape) tape->steps[d].resize(t_len);
      StepCache scratch;
      for (std::size_t s = 0; s < t_len; ++s) {
        const std::size_t t = d == 0 ? s : t_len - 1 - s;
        StepCache& sc = tape ? tape->steps[d][s] : scratch;
        h = gru_step(d, time_slice(input, t), h, o, &rng, sc);
      }
      nn::check_finite(h, kDirection[d]);
      finals[d] = std::move(h);
    }
    return nn::concat_channels({&finals[0], &finals[1]});
  }

  void encode_backward(const EncoderTape& tape, const Tensor& d_out, const ForwardOptions& o,
                       Gradients& G) const {
    for (int d = 0; d < 2; ++d) {
      Tensor dh = nn::slice_channels(d_out, u(d) * hd, hd);
      const auto& steps = tape.steps[d];
      for (std::size_t s = steps.size(); s-- > 0;) dh = gru_step_backward(d, steps[s], dh, o, G, nullptr);
    }
  }

  // ---- feature pyramid attention ------------------------------------------

  struct FpaTape {
    std::size_t h = 0, w = 0, top = 0, left = 0;
    Tensor xp, master;
    std::vector<double> mean;
    Tensor d[3];
    Tensor up3, u2, up2, u1, up1, att;
  };

  static Tensor relu(Tensor x) {
    for (auto& v : x.storage()) v = std::max(v, 0.0);
    return x;
  }

  Tensor fpa(const Tensor& x, FpaTape& t) const {
    require_rank(x, 3, "features");
    t.h = x.dim(0);
    t.w = x.dim(1);
    if (t.h < 8 || t.w < 8) {
      throw ShapeError("features", "FPA needs spatial dims >= 8, got " + shape_to_string(x.shape()));
    }
    const std::size_t ph = (8 - t.h % 8) % 8, pw = (8 - t.w % 8) % 8;
    t.top = ph / 2;
    t.left = pw / 2;
    t.xp = nn::reflect_pad(x, t.top, ph - t.top, t.left, pw - t.left);
    const std::size_t hp = t.xp.dim(0), wp = t.xp.dim(1), e = x.dim(2);

    t.master = nn::conv2d(t.xp, w(ids.master_k), w(ids.master_b), 1, f);
    t.mean.assign(e, 0.0);
    for (std::size_t p = 0; p < t.h * t.w; ++p) {
      for (std::size_t k = 0; k < e; ++k) t.mean[k] += x[p * e + k];
    }
    for (auto& m : t.mean) m /= static_cast<double>(t.h * t.w);
    std::vector<double> gap(f);
    const double* gk = w(ids.gap_k);
    for (std::size_t j = 0; j < f; ++j) {
      double a = w(ids.gap_b)[j];
      for (std::size_t k = 0; k < e; ++k) a += t.mean[k] * gk[k * f + j];
      gap[j] = a;
    }

    const std::size_t kernel[3] = {7, 5, 3};
    const Tensor* prev = &t.master;
    for (int i = 0; i < 3; ++i) {
      t.d[i] = relu(nn::conv2d(*prev, w(ids.down_k[i]), w(ids.down_b[i]), kernel[i], f, 2));
      prev = &t.d[i];
    }
    t.up3 = nn::upsample_nearest(t.d[2], t.d[1].dim(0), t.d[1].dim(1));
    t.u2 = nn::conv2d(t.up3, w(ids.up2_k), w(ids.up2_b), 3, f);
    for (std::size_t i = 0; i < t.u2.size(); ++i) t.u2[i] += t.d[1][i];
    t.up2 = nn::upsample_nearest(t.u2, t.d[0].dim(0), t.d[0].dim(1));
    t.u1 = nn::conv2d(t.up2, w(ids.up1_k), w(ids.up1_b), 3, f);
    for (std::size_t i = 0; i < t.u1.size(); ++i) t.u1[i] += t.d[0][i];
    t.up1 = nn::upsample_nearest(t.u1, hp, wp);
    t.att = nn::conv2d(t.up1, w(ids.att_k), w(ids.att_b), 3, f);

    Tensor full({hp, wp, f});
    for (std::size_t i = 0; i < full.size(); ++i) full[i] = t.master[i] * t.att[i] + gap[i % f];
    Tensor out = nn::crop(full, t.top, t.left, t.h, t.w);
    nn::check_finite(out, "fpa");
    return out;
  }

  Tensor fpa_backward(const FpaTape& t, const Tensor& d_out, Gradients& G) const {
    const std::size_t hp = t.xp.dim(0), wp = t.xp.dim(1), e = t.xp.dim(2);
    const Tensor dfull = nn::crop_backward(d_out, hp, wp, t.top, t.left);
    std::vector<double> dgap(f, 0.0);
    Tensor dmaster(t.master.shape()), datt(t.att.shape());
    for (std::size_t i = 0; i < dfull.size(); ++i) {
      dgap[i % f] += dfull[i];
      dmaster[i] = dfull[i] * t.att[i];
      datt[i] = dfull[i] * t.master[i];
    }
    Tensor dup1(t.up1.shape());
    nn::conv2d_backward(t.up1, w(ids.att_k), 3, f, 1, datt, G.data(ids.att_k), G.data(ids.att_b), &dup1);
    Tensor du1 = nn::upsample_nearest_backward(dup1, t.u1.dim(0), t.u1.dim(1));
    Tensor dd[3] = {du1, Tensor(t.d[1].shape()), Tensor(t.d[2].shape())};
    Tensor dup2(t.up2.shape());
    nn::conv2d_backward(t.up2, w(ids.up1_k), 3, f, 1, du1, G.data(ids.up1_k), G.data(ids.up1_b), &dup2);
    const Tensor du2 = nn::upsample_nearest_backward(dup2, t.u2.dim(0), t.u2.dim(1));
    dd[1] = du2;
    Tensor dup3(t.up3.shape());
    nn::conv2d_backward(t.up3, w(ids.up2_k), 3, f, 1, du2, G.data(ids.up2_k), G.data(ids.up2_b), &dup3);
    dd[2] = nn::upsample_nearest_backward(dup3, t.d[2].dim(0), t.d[2].dim(1));

    const std::size_t kernel[3] = {7, 5, 3};
    for (int i = 2; i >= 0; --i) {
      for (std::size_t j = 0; j < dd[i].size(); ++j) {
        if (t.d[i][j] <= 0.0) dd[i][j] = 0.0;
      }
      const Tensor& in = i == 0 ? t.master : t.d[i - 1];
      Tensor& din = i == 0 ? dmaster : dd[i - 1];
      nn::conv2d_backward(in, w(ids.down_k[i]), kernel[i], f, 2, dd[i], G.data(ids.down_k[i]),
                          G.data(ids.down_b[i]), &din);
    }
    Tensor dxp(t.xp.shape());
    nn::conv2d_backward(t.xp, w(ids.master_k), 1, f, 1, dmaster, G.data(ids.master_k),
                        G.data(ids.master_b), &dxp);
    Tensor dx = nn::reflect_pad_backward(dxp, t.h, t.w, t.top, t.left);

    const double* gk = w(ids.gap_k);
    double* dgk = G.data(ids.gap_k);
    double* dgb = G.data(ids.gap_b);
    std::vector<double> dmean(e, 0.0);
    for (std::size_t j = 0; j < f; ++j) {
      dgb[j] += dgap[j];
      for (std::size_t k = 0; k < e; ++k) {
        dgk[k * f + j] += t.mean[k] * dgap[j];
        dmean[k] += gk[k * f + j] * dgap[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(t.h * t.w);
    for (std::size_t p = 0; p < t.h * t.w; ++p) {
      for (std::size_t k = 0; k < e; ++k) dx[p * e + k] += dmean[k] * inv;
    }
    return dx;
  }

  // ---- conv blocks -----------------------------------------------------------

  struct Norm {
    std::vector<double> mean, stddev, r, d;
  };

  struct BlockTape {
    Tensor n, u;
    nn::ChannelGateCache cg;
    std::vector<double> q;
    std::vector<std::uint8_t> chose_channel;
    std::vector<double> drop;
    std::vector<double> dn_sum, dnn_sum;
  };

  static void batch_moments(const std::vector<const Tensor*>& xs, std::size_t c,
                            std::vector<double>& mean, std::vector<double>& var) {
    mean.assign(c, 0.0);
    var.assign(c, 0.0);
    double count = 0.0;
    for (const Tensor* x : xs) {
      for (std::size_t i = 0; i < x->size(); ++i) mean[i % c] += (*x)[i];
      count += static_cast<double>(x->size() / c);
    }
    for (auto& m : mean) m /= count;
    for (const Tensor* x : xs) {
      for (std::size_t i = 0; i < x->size(); ++i) {
        const double dv = (*x)[i] - mean[i % c];
        var[i % c] += dv * dv;
      }
    }
    for (auto& v : var) v /= count;
  }

  Norm make_norm(int b, const std::vector<double>* batch_mean, const std::vector<double>* batch_var,
                 const ForwardOptions& o) const {
    const BlockIds& id = ids.block[b];
    const double eps = cfg.renorm_eps;
    Norm n;
    n.mean.resize(cb);
    n.stddev.resize(cb);
    n.r.assign(cb, 1.0);
    n.d.assign(cb, 0.0);
    for (std::size_t k = 0; k < cb; ++k) {
      const double run_sd = std::sqrt(w(id.run_var)[k] + eps);
      if (batch_mean) {
        n.mean[k] = (*batch_mean)[k];
        n.stddev[k] = std::sqrt((*batch_var)[k] + eps);
        n.r[k] = std::clamp(n.stddev[k] / run_sd, 1.0 / o.rmax, o.rmax);
        n.d[k] = std::clamp((n.mean[k] - w(id.run_mean)[k]) / run_sd, -o.dmax, o.dmax);
      } else {
        n.mean[k] = w(id.run_mean)[k];
        n.stddev[k] = run_sd;
      }
    }
    return n;
  }

  Tensor block_post(int b, const Tensor& a, const Norm& nm, const ForwardOptions& o,
                    std::uint64_t sample_seed, BlockTape& t) const {
    const BlockIds& id = ids.block[b];
    const std::size_t hw = a.dim(0) * a.dim(1);
    const double* gamma = w(id.gamma);
    const double* beta = w(id.beta);
    t.n = Tensor(a.shape());
    t.u = Tensor(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t k = i % cb;
      t.n[i] = (a[i] - nm.mean[k]) / nm.stddev[k];
      t.u[i] = std::max(gamma[k] * (nm.r[k] * t.n[i] + nm.d[k]) + beta[k], 0.0);
    }
    Tensor v = t.u;
    if (!o.neutral_se) {
      const auto s = nn::channel_gate(t.u, w(id.fc1_k), w(id.fc1_b), w(id.fc2_k), w(id.fc2_b), ch, t.cg);
      t.q = nn::spatial_gate(t.u, w(id.sse_k), w(id.sse_b));
      t.chose_channel.assign(a.size(), 0);
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t k = 0; k < cb; ++k) {
          const std::size_t i = p * cb + k;
          const double by_channel = t.u[i] * s[k];
          const double by_space = t.u[i] * t.q[p];
          t.chose_channel[i] = by_channel >= by_space ? 1 : 0;
          v[i] = std::max(by_channel, by_space);
        }
      }
    }
    t.drop.clear();
    if (o.mode == Mode::train && o.dropblock_prob > 0.0) {
      Rng rng(derive_seed(sample_seed, {2, static_cast<std::uint64_t>(b)}));
      t.drop = nn::dropblock_multiplier(a.dim(0), a.dim(1), cb, o.dropblock_prob,
                                        u(cfg.dropblock_block), rng);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= t.drop[i];
    }
    nn::check_finite(v, kBlock[b]);
    return v;
  }

  /// Backward to dL/dn (the standardized activation); fills the per-sample
  /// channel sums needed for the batch-statistics term.
  Tensor block_post_backward(int b, BlockTape& t, const Tensor& d_out, const Norm& nm,
                             const ForwardOptions& o, Gradients& G) const {
    const BlockIds& id = ids.block[b];
    const std::size_t hw = t.u.dim(0) * t.u.dim(1);
    Tensor dv = d_out;
    if (!t.drop.empty()) {
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= t.drop[i];
    }
    Tensor du(t.u.shape());
    if (o.neutral_se) {
      du = dv;
    } else {
      std::vector<double> ds(cb, 0.0), dq(hw, 0.0);
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t k = 0; k < cb; ++k) {
          const std::size_t i = p * cb + k;
          if (t.chose_channel[i]) {
            du[i] += dv[i] * t.cg.s[k];
            ds[k] += dv[i] * t.u[i];
          } else {
            du[i] += dv[i] * t.q[p];
            dq[p] += dv[i] * t.u[i];
          }
        }
      }
      nn::channel_gate_backward(t.u, t.cg, ds, w(id.fc1_k), w(id.fc2_k), ch, G.data(id.fc1_k),
                                G.data(id.fc1_b), G.data(id.fc2_k), G.data(id.fc2_b), du);
      nn::spatial_gate_backward(t.u, t.q, dq, w(id.sse_k), G.data(id.sse_k), G.data(id.sse_b), du);
    }
    const double* gamma = w(id.gamma);
    double* dgamma = G.data(id.gamma);
    double* dbeta = G.data(id.beta);
    Tensor dn(t.u.shape());
    t.dn_sum.assign(cb, 0.0);
    t.dnn_sum.assign(cb, 0.0);
    for (std::size_t i = 0; i < dn.size(); ++i) {
      const std::size_t k = i % cb;
      const double dy = t.u[i] > 0.0 ? du[i] : 0.0;
      dgamma[k] += dy * (nm.r[k] * t.n[i] + nm.d[k]);
      dbeta[k] += dy;
      dn[i] = dy * gamma[k] * nm.r[k];
      t.dn_sum[k] += dn[i];
      t.dnn_sum[k] += dn[i] * t.n[i];
    }
    return dn;
  }

  // ---- full batch ------------------------------------------------------------

  struct SampleTape {
    EncoderTape enc;
    FpaTape fpa;
    BlockTape blk[2];
    Tensor enc_out, fpa_out, pre[2], out[2], hyper, probs;
  };

  BatchOutput run(const std::vector<const Tensor*>& inputs, const ForwardOptions& o,
                  const LossGradFn* loss_grad, Gradients* grads) const {
    if (inputs.empty()) throw DataError("empty batch");
    const std::size_t n = inputs.size();
    const bool backward = loss_grad != nullptr;
    const bool batch_stats = o.mode == Mode::train;
    std::vector<SampleTape> tapes(n);
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) seeds[i] = derive_seed(o.noise_seed, {i});

    BatchOutput result;
    Norm norms[2];
    for (int b = 0; b < 2; ++b) {
      parallel_for(n, [&](std::size_t i) {
        SampleTape& t = tapes[i];
        if (b == 0) {
          t.enc_out = encode(*inputs[i], o, seeds[i], backward ? &t.enc : nullptr);
          t.fpa_out = fpa(t.enc_out, t.fpa);
        }
        const Tensor& in = b == 0 ? t.fpa_out : t.out[0];
        t.pre[b] = nn::conv2d(in, w(ids.block[b].conv_k), nullptr, 3, cb);
      });
      if (batch_stats) {
        std::vector<const Tensor*> pre(n);
        for (std::size_t i = 0; i < n; ++i) pre[i] = &tapes[i].pre[b];
        batch_moments(pre, cb, result.stats.mean[b], result.stats.var[b]);
        norms[b] = make_norm(b, &result.stats.mean[b], &result.stats.var[b], o);
      } else {
        norms[b] = make_norm(b, nullptr, nullptr, o);
      }
      parallel_for(n, [&](std::size_t i) {
        SampleTape& t = tapes[i];
        t.out[b] = block_post(b, t.pre[b], norms[b], o, seeds[i], t.blk[b]);
      });
    }
    result.stats.valid = batch_stats;

    parallel_for(n, [&](std::size_t i) {
      SampleTape& t = tapes[i];
      t.hyper = nn::concat_channels({&t.enc_out, &t.fpa_out, &t.out[0], &t.out[1]});
      const Tensor logits = nn::conv2d(t.hyper, w(ids.head_k), w(ids.head_b), 1, 1);
      nn::check_finite(logits, "head");
      t.probs = Tensor({logits.dim(0), logits.dim(1)});
      for (std::size_t j = 0; j < logits.size(); ++j) t.probs[j] = nn::sigmoid(logits[j]);
    });
    result.probs.reserve(n);
    for (auto& t : tapes) result.probs.push_back(t.probs);
    if (!backward) return result;

    std::vector<Tensor> dprobs(n);
    for (std::size_t i = 0; i < n; ++i) {
      dprobs[i] = (*loss_grad)(i, result.probs[i]);
      require_shape(dprobs[i], result.probs[i].shape(), "loss gradient");
    }

    std::vector<Gradients> local(n, Gradients(P));
    std::vector<Tensor> d_enc(n), d_fpa(n), d_out[2], dn[2];
    d_out[0].resize(n);
    d_out[1].resize(n);
    dn[0].resize(n);
    dn[1].resize(n);
    const std::size_t e = 2 * hd;

    parallel_for(n, [&](std::size_t i) {
      SampleTape& t = tapes[i];
      Gradients& G = local[i];
      Tensor dlogit({t.probs.dim(0), t.probs.dim(1), 1});
      for (std::size_t j = 0; j < t.probs.size(); ++j) {
        dlogit[j] = dprobs[i][j] * t.probs[j] * (1.0 - t.probs[j]);
      }
      Tensor dhyper(t.hyper.shape());
      nn::conv2d_backward(t.hyper, w(ids.head_k), 1, 1, 1, dlogit, G.data(ids.head_k),
                          G.data(ids.head_b), &dhyper);
      d_enc[i] = nn::slice_channels(dhyper, 0, e);
      d_fpa[i] = nn::slice_channels(dhyper, e, f);
      d_out[0][i] = nn::slice_channels(dhyper, e + f, cb);
      d_out[1][i] = nn::slice_channels(dhyper, e + f + cb, cb);
      dn[1][i] = block_post_backward(1, t.blk[1], d_out[1][i], norms[1], o, G);
    });

    for (int b = 1; b >= 0; --b) {
      std::vector<double> mean_dn(cb, 0.0), mean_dnn(cb, 0.0);
      if (batch_stats) {
        double count = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < cb; ++k) {
            mean_dn[k] += tapes[i].blk[b].dn_sum[k];
            mean_dnn[k] += tapes[i].blk[b].dnn_sum[k];
          }
          count += static_cast<double>(tapes[i].pre[b].size() / cb);
        }
        for (std::size_t k = 0; k < cb; ++k) {
          mean_dn[k] /= count;
          mean_dnn[k] /= count;
        }
      }
      parallel_for(n, [&](std::size_t i) {
        SampleTape& t = tapes[i];
        Gradients& G = local[i];
        Tensor da(t.pre[b].shape());
        for (std::size_t j = 0; j < da.size(); ++j) {
          const std::size_t k = j % cb;
          da[j] = (dn[b][i][j] - mean_dn[k] - t.blk[b].n[j] * mean_dnn[k]) / norms[b].stddev[k];
        }
        const Tensor& in = b == 0 ? t.fpa_out : t.out[0];
        Tensor& din = b == 0 ? d_fpa[i] : d_out[0][i];
        nn::conv2d_backward(in, w(ids.block[b].conv_k), 3, cb, 1, da, G.data(ids.block[b].conv_k),
                            nullptr, &din);
        if (b == 1) {
          dn[0][i] = block_post_backward(0, t.blk[0], d_out[0][i], norms[0], o, G);
        } else {
          const Tensor dx = fpa_backward(t.fpa, d_fpa[i], G);
          for (std::size_t j = 0; j < dx.size(); ++j) d_enc[i][j] += dx[j];
          encode_backward(t.enc, d_enc[i], o, G);
        }
      });
    }
    for (const auto& g : local) grads->add(g);
    return result;
  }
};

// ---- Network -------------------------------------------------------------------

Network::Network(NetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  build_layout();
  initialize(seed);
}

Network::Network(NetConfig config, nn::ParamStore params) : config_(std::move(config)) {
  build_layout();
  if (!params_.layout_equal(params)) {
    throw ConfigError("parameter layout does not match the network configuration");
  }
  params_ = std::move(params);
}

void Network::build_layout() { params_ = make_layout(config_, nullptr); }

void Network::initialize(std::uint64_t seed) {
  std::vector<InitRule> rules;
  params_ = make_layout(config_, &rules);
  Rng rng(seed);
  const double prior = config_.head_prior;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    auto v = params_.values(i);
    const InitRule& r = rules[i];
    switch (r.kind) {
      case InitKind::zeros: nn::init_constant(v, 0.0); break;
      case InitKind::ones: nn::init_constant(v, 1.0); break;
      case InitKind::glorot: nn::init_glorot_uniform(v, r.fan_in, r.fan_out, rng); break;
      case InitKind::he: nn::init_he_normal(v, r.fan_in, rng); break;
      case InitKind::head_weight: nn::init_normal(v, config_.head_init_std, rng); break;
      case InitKind::head_bias: nn::init_constant(v, -std::log((1.0 - prior) / prior)); break;
    }
  }
  params_.round_to_float();
}

std::size_t Network::param_count(const NetConfig& config) {
  return make_layout(config, nullptr).learnable_count();
}

Tensor Network::predict(const Tensor& input) const {
  return forward({&input}, ForwardOptions{}).probs.front();
}

BatchOutput Network::forward(const std::vector<const Tensor*>& inputs, const ForwardOptions& opts) const {
  return Impl(config_, params_).run(inputs, opts, nullptr, nullptr);
}

BatchOutput Network::forward_backward(const std::vector<const Tensor*>& inputs,
                                      const ForwardOptions& opts, const LossGradFn& loss_grad,
                                      nn::Gradients& grads) const {
  return Impl(config_, params_).run(inputs, opts, &loss_grad, &grads);
}

void Network::commit_running_stats(const RenormStats& stats) {
  if (!stats.valid) return;
  const double m = config_.renorm_momentum;
  for (int b = 0; b < 2; ++b) {
    const std::string s = kBlock[b];
    auto mean = params_.values(params_.id(s + ".renorm.running_mean"));
    auto var = params_.values(params_.id(s + ".renorm.running_var"));
    for (std::size_t k = 0; k < mean.size(); ++k) {
      mean[k] = static_cast<float>(m * mean[k] + (1.0 - m) * stats.mean[b][k]);
      var[k] = static_cast<float>(m * var[k] + (1.0 - m) * stats.var[b][k]);
    }
  }
}

Tensor Network::gru_cell(int direction, const Tensor& x, const Tensor& h_prev,
                         const ForwardOptions& opts, std::uint64_t mask_seed) const {
  Impl impl(config_, params_);
  Impl::StepCache sc;
  Rng rng(mask_seed);
  return impl.gru_step(direction, x, h_prev, opts, &rng, sc);
}

Network::CellGradient Network::gru_cell_backward(int direction, const Tensor& x, const Tensor& h_prev,
                                                 const Tensor& dh, const ForwardOptions& opts,
                                                 nn::Gradients& grads, std::uint64_t mask_seed) const {
  Impl impl(config_, params_);
  Impl::StepCache sc;
  Rng rng(mask_seed);
  CellGradient out;
  out.h = impl.gru_step(direction, x, h_prev, opts, &rng, sc);
  out.dx = Tensor(x.shape());
  out.dh_prev = impl.gru_step_backward(direction, sc, dh, opts, grads, &out.dx);
  return out;
}

Tensor Network::encode(const Tensor& input, const ForwardOptions& opts, std::size_t sample_index) const {
  return Impl(config_, params_).encode(input, opts, derive_seed(opts.noise_seed, {sample_index}), nullptr);
}

Tensor Network::fpa_decode(const Tensor& features) const {
  Impl::FpaTape tape;
  return Impl(config_, params_).fpa(features, tape);
}

std::vector<Tensor> Network::conv_block(int index, const std::vector<Tensor>& inputs,
                                        const ForwardOptions& opts) const {
  if (index < 0 || index > 1) throw ConfigError("conv block index must be 0 or 1");
  Impl impl(config_, params_);
  const auto& id = impl.ids.block[index];
  std::vector<Tensor> pre;
  for (const auto& x : inputs) pre.push_back(nn::conv2d(x, params_.data(id.conv_k), nullptr, 3, impl.cb));
  Impl::Norm norm;
  if (opts.mode == Mode::train) {
    std::vector<const Tensor*> ptrs;
    for (const auto& p : pre) ptrs.push_back(&p);
    std::vector<double> mean, var;
    Impl::batch_moments(ptrs, impl.cb, mean, var);
    norm = impl.make_norm(index, &mean, &var, opts);
  } else {
    norm = impl.make_norm(index, nullptr, nullptr, opts);
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    Impl::BlockTape tape;
    out.push_back(impl.block_post(index, pre[i], norm, opts, derive_seed(opts.noise_seed, {i}), tape));
  }
  return out;
}

}  // namespace tof
