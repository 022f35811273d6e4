#include "tof/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "tof/detail/grid.hpp"

namespace tof::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using detail::reflect_index;

struct Geometry {
  std::size_t h, w, c_in, k, stride, out_h, out_w;
  std::size_t pixels() const { return out_h * out_w; }
  std::size_t patch() const { return k * k * c_in; }
};

Geometry geometry(const Tensor& x, std::size_t k, std::size_t stride) {
  require_rank(x, 3, "conv input");
  if (k % 2 == 0 || stride == 0) throw ConfigError("convolution needs odd kernel and stride >= 1");
  const std::size_t h = x.dim(0), w = x.dim(1);
  if (k / 2 >= h || k / 2 >= w) {
    throw ShapeError("conv input", "kernel " + std::to_string(k) + " too large for " +
                                       shape_to_string(x.shape()));
  }
  return {h, w, x.dim(2), k, stride, conv_out_size(h, k, stride), conv_out_size(w, k, stride)};
}

bool is_pointwise(const Geometry& g) { return g.k == 1 && g.stride == 1; }

RowMat im2col(const Tensor& x, const Geometry& g) {
  RowMat cols(g.pixels(), g.patch());
  const auto pad = static_cast<std::ptrdiff_t>(g.k / 2);
  const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* row = cols.data() + (oy * g.out_w + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto iy = reflect_index(static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad, h);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto ix = reflect_index(static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad, w);
          const double* src = x.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c_in;
          std::copy(src, src + g.c_in, row + (ky * g.k + kx) * g.c_in);
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMat& cols, const Geometry& g, Tensor& dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.k / 2);
  const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* row = cols.data() + (oy * g.out_w + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto iy = reflect_index(static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad, h);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto ix = reflect_index(static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad, w);
          double* dst = dx.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c_in;
          const double* src = row + (ky * g.k + kx) * g.c_in;
          for (std::size_t c = 0; c < g.c_in; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const double* w, const double* b, std::size_t k, std::size_t c_out,
              std::size_t stride) {
  const Geometry g = geometry(x, k, stride);
  Tensor y({g.out_h, g.out_w, c_out});
  MutMap out(y.data(), static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(c_out));
  ConstMap weights(w, static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(c_out));
  if (is_pointwise(g)) {
    out.noalias() = ConstMap(x.data(), static_cast<Eigen::Index>(g.pixels()),
                             static_cast<Eigen::Index>(g.c_in)) * weights;
  } else {
    out.noalias() = im2col(x, g) * weights;
  }
  if (b != nullptr) {
    out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b, static_cast<Eigen::Index>(c_out));
  }
  return y;
}

void conv2d_backward(const Tensor& x, const double* w, std::size_t k, std::size_t c_out,
                     std::size_t stride, const Tensor& dy, double* dw, double* db, Tensor* dx) {
  const Geometry g = geometry(x, k, stride);
  require_shape(dy, {g.out_h, g.out_w, c_out}, "conv output gradient");
  const auto P = static_cast<Eigen::Index>(g.pixels());
  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto C = static_cast<Eigen::Index>(c_out);
  ConstMap grad_out(dy.data(), P, C);
  ConstMap weights(w, K, C);
  if (db != nullptr) {
    for (Eigen::Index r = 0; r < P; ++r) {
      for (Eigen::Index c = 0; c < C; ++c) db[c] += grad_out(r, c);
    }
  }
  if (is_pointwise(g)) {
    ConstMap cols(x.data(), P, K);
    if (dw != nullptr) MutMap(dw, K, C).noalias() += cols.transpose() * grad_out;
    if (dx != nullptr) {
      require_shape(*dx, x.shape(), "conv input gradient");
      MutMap(dx->data(), P, K).noalias() += grad_out * weights.transpose();
    }
    return;
  }
  if (dw != nullptr) {
    const RowMat cols = im2col(x, g);
    MutMap(dw, K, C).noalias() += cols.transpose() * grad_out;
  }
  if (dx != nullptr) {
    require_shape(*dx, x.shape(), "conv input gradient");
    RowMat dcols = grad_out * weights.transpose();
    col2im_add(dcols, g, *dx);
  }
}

Tensor layer_norm(const Tensor& x, const double* gain, const double* offset, LayerNormCache& cache,
                  double eps) {
  const std::size_t c = x.dim(x.rank() - 1);
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x.values()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x.values()) var += (v - mean) * (v - mean);
  var /= n;
  cache.inv_std = 1.0 / std::sqrt(var + eps);
  cache.xhat = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xh = (x[i] - mean) * cache.inv_std;
    cache.xhat[i] = xh;
    y[i] = xh * gain[i % c] + offset[i % c];
  }
  return y;
}

Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, const double* gain,
                           double* dgain, double* doffset) {
  const std::size_t c = dy.dim(dy.rank() - 1);
  const double n = static_cast<double>(dy.size());
  Tensor dxhat(dy.shape());
  double mean_d = 0.0, mean_dx = 0.0;
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const std::size_t ch = i % c;
    dgain[ch] += dy[i] * cache.xhat[i];
    doffset[ch] += dy[i];
    dxhat[i] = dy[i] * gain[ch];
    mean_d += dxhat[i];
    mean_dx += dxhat[i] * cache.xhat[i];
  }
  mean_d /= n;
  mean_dx /= n;
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dxhat[i] = cache.inv_std * (dxhat[i] - mean_d - cache.xhat[i] * mean_dx);
  }
  return dxhat;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  const std::size_t h = parts.front()->dim(0), w = parts.front()->dim(1);
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 3 || p->dim(0) != h || p->dim(1) != w) {
      throw ShapeError("concat", "spatial dims differ: " + shape_to_string(p->shape()));
    }
    total += p->dim(2);
  }
  Tensor out({h, w, total});
  for (std::size_t px = 0; px < h * w; ++px) {
    double* dst = out.data() + px * total;
    for (const Tensor* p : parts) {
      const std::size_t c = p->dim(2);
      std::copy_n(p->data() + px * c, c, dst);
      dst += c;
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t n) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out({h, w, n});
  for (std::size_t px = 0; px < h * w; ++px) std::copy_n(x.data() + px * c + c0, n, out.data() + px * n);
  return out;
}

void add_into_channels(Tensor& dst, const Tensor& src, std::size_t c0) {
  const std::size_t hw = dst.dim(0) * dst.dim(1), c = dst.dim(2), n = src.dim(2);
  for (std::size_t px = 0; px < hw; ++px) {
    for (std::size_t j = 0; j < n; ++j) dst[px * c + c0 + j] += src[px * n + j];
  }
}

Tensor upsample_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  const std::size_t ih = x.dim(0), iw = x.dim(1), c = x.dim(2);
  Tensor out({out_h, out_w, c});
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = y * ih / out_h;
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const std::size_t sx = xx * iw / out_w;
      std::copy_n(x.data() + (sy * iw + sx) * c, c, out.data() + (y * out_w + xx) * c);
    }
  }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& dy, std::size_t in_h, std::size_t in_w) {
  const std::size_t oh = dy.dim(0), ow = dy.dim(1), c = dy.dim(2);
  Tensor dx({in_h, in_w, c});
  for (std::size_t y = 0; y < oh; ++y) {
    const std::size_t sy = y * in_h / oh;
    for (std::size_t xx = 0; xx < ow; ++xx) {
      const std::size_t sx = xx * in_w / ow;
      const double* src = dy.data() + (y * ow + xx) * c;
      double* dst = dx.data() + (sy * in_w + sx) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
    }
  }
  return dx;
}

Tensor reflect_pad(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left,
                   std::size_t right) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t ph = h + top + bottom, pw = w + left + right;
  Tensor out({ph, pw, c});
  for (std::size_t y = 0; y < ph; ++y) {
    const auto sy = static_cast<std::size_t>(reflect_index(
        static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(top), static_cast<std::ptrdiff_t>(h)));
    for (std::size_t xx = 0; xx < pw; ++xx) {
      const auto sx = static_cast<std::size_t>(reflect_index(
          static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(left), static_cast<std::ptrdiff_t>(w)));
      std::copy_n(x.data() + (sy * w + sx) * c, c, out.data() + (y * pw + xx) * c);
    }
  }
  return out;
}

Tensor reflect_pad_backward(const Tensor& dy, std::size_t h, std::size_t w, std::size_t top,
                            std::size_t left) {
  const std::size_t ph = dy.dim(0), pw = dy.dim(1), c = dy.dim(2);
  Tensor dx({h, w, c});
  for (std::size_t y = 0; y < ph; ++y) {
    const auto sy = static_cast<std::size_t>(reflect_index(
        static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(top), static_cast<std::ptrdiff_t>(h)));
    for (std::size_t xx = 0; xx < pw; ++xx) {
      const auto sx = static_cast<std::size_t>(reflect_index(
          static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(left), static_cast<std::ptrdiff_t>(w)));
      const double* src = dy.data() + (y * pw + xx) * c;
      double* dst = dx.data() + (sy * w + sx) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
    }
  }
  return dx;
}

Tensor crop(const Tensor& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const std::size_t fw = x.dim(1), c = x.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(x.data() + ((y + top) * fw + left) * c, w * c, out.data() + y * w * c);
  }
  return out;
}

Tensor crop_backward(const Tensor& dy, std::size_t full_h, std::size_t full_w, std::size_t top,
                     std::size_t left) {
  const std::size_t h = dy.dim(0), w = dy.dim(1), c = dy.dim(2);
  Tensor dx({full_h, full_w, c});
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(dy.data() + y * w * c, w * c, dx.data() + ((y + top) * full_w + left) * c);
  }
  return dx;
}

std::vector<double> spatial_gate(const Tensor& x, const double* w, const double* b) {
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  std::vector<double> q(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    double t = b[0];
    const double* xp = x.data() + p * c;
    for (std::size_t k = 0; k < c; ++k) t += xp[k] * w[k];
    q[p] = sigmoid(t);
  }
  return q;
}

void spatial_gate_backward(const Tensor& x, const std::vector<double>& q,
                           const std::vector<double>& dq, const double* w, double* dw, double* db,
                           Tensor& dx) {
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  for (std::size_t p = 0; p < hw; ++p) {
    const double dt = dq[p] * q[p] * (1.0 - q[p]);
    const double* xp = x.data() + p * c;
    double* dxp = dx.data() + p * c;
    db[0] += dt;
    for (std::size_t k = 0; k < c; ++k) {
      dw[k] += dt * xp[k];
      dxp[k] += dt * w[k];
    }
  }
}

std::vector<double> channel_gate(const Tensor& x, const double* w1, const double* b1,
                                 const double* w2, const double* b2, std::size_t hidden,
                                 ChannelGateCache& cache) {
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  cache.mean.assign(c, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 0; k < c; ++k) cache.mean[k] += x[p * c + k];
  }
  for (auto& m : cache.mean) m /= static_cast<double>(hw);
  cache.hidden_pre.assign(hidden, 0.0);
  for (std::size_t j = 0; j < hidden; ++j) {
    double a = b1[j];
    for (std::size_t k = 0; k < c; ++k) a += cache.mean[k] * w1[k * hidden + j];
    cache.hidden_pre[j] = a;
  }
  cache.s.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double a = b2[k];
    for (std::size_t j = 0; j < hidden; ++j) a += std::max(cache.hidden_pre[j], 0.0) * w2[j * c + k];
    cache.s[k] = sigmoid(a);
  }
  return cache.s;
}

void channel_gate_backward(const Tensor& x, const ChannelGateCache& cache,
                           const std::vector<double>& ds, const double* w1, const double* w2,
                           std::size_t hidden, double* dw1, double* db1, double* dw2, double* db2,
                           Tensor& dx) {
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  std::vector<double> da2(c), dh(hidden, 0.0), dmean(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    da2[k] = ds[k] * cache.s[k] * (1.0 - cache.s[k]);
    db2[k] += da2[k];
  }
  for (std::size_t j = 0; j < hidden; ++j) {
    const double hj = std::max(cache.hidden_pre[j], 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      dw2[j * c + k] += hj * da2[k];
      dh[j] += w2[j * c + k] * da2[k];
    }
  }
  for (std::size_t j = 0; j < hidden; ++j) {
    const double da1 = cache.hidden_pre[j] > 0.0 ? dh[j] : 0.0;
    db1[j] += da1;
    for (std::size_t k = 0; k < c; ++k) {
      dw1[k * hidden + j] += cache.mean[k] * da1;
      dmean[k] += w1[k * hidden + j] * da1;
    }
  }
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 0; k < c; ++k) dx[p * c + k] += dmean[k] / static_cast<double>(hw);
  }
}

std::vector<double> dropblock_multiplier(std::size_t h, std::size_t w, std::size_t c,
                                         double drop_prob, std::size_t block, Rng& rng) {
  if (drop_prob <= 0.0) return {};
  const std::size_t vh = h >= block ? h - block + 1 : 1;
  const std::size_t vw = w >= block ? w - block + 1 : 1;
  const double gamma = drop_prob / static_cast<double>(block * block) *
                       static_cast<double>(h * w) / static_cast<double>(vh * vw);
  std::vector<double> mult(h * w * c, 1.0);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y0 = 0; y0 < vh; ++y0) {
      for (std::size_t x0 = 0; x0 < vw; ++x0) {
        if (!rng.bernoulli(gamma)) continue;
        for (std::size_t y = y0; y < std::min(h, y0 + block); ++y) {
          for (std::size_t x = x0; x < std::min(w, x0 + block); ++x) mult[(y * w + x) * c + k] = 0.0;
        }
      }
    }
  }
  double kept = 0.0;
  for (double m : mult) kept += m;
  const double scale = kept > 0.0 ? static_cast<double>(mult.size()) / kept : 0.0;
  for (auto& m : mult) m *= scale;
  return mult;
}

void check_finite(const Tensor& x, const char* where) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw NumericError(where, "element " + std::to_string(i) + " of " + shape_to_string(x.shape()));
    }
  }
}

}  // namespace tof::nn
