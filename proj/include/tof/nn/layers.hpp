#pragma once

// Layer primitives over [H, W, C] feature maps (row-major, channels last).
// Convolution weights are stored [k, k, C_in, C_out]; spatial padding is
// always reflective ("same" size for stride 1).

#include <cmath>
#include <vector>

#include "tof/random.hpp"
#include "tof/tensor.hpp"

namespace tof::nn {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline std::size_t conv_out_size(std::size_t n, std::size_t k, std::size_t stride) {
  return (n + 2 * (k / 2) - k) / stride + 1;
}

/// y = conv(x, w) + b. `b` may be null.
Tensor conv2d(const Tensor& x, const double* w, const double* b, std::size_t k, std::size_t c_out,
              std::size_t stride = 1);

/// Accumulates dL/dw, dL/db (when non-null) and dL/dx (when non-null) for
/// y = conv2d(x, w, b, k, c_out, stride) given dy = dL/dy.
void conv2d_backward(const Tensor& x, const double* w, std::size_t k, std::size_t c_out,
                     std::size_t stride, const Tensor& dy, double* dw, double* db, Tensor* dx);

struct LayerNormCache {
  Tensor xhat;
  double inv_std = 0.0;
};

/// Normalizes over all H*W*C elements; per-channel gain and offset.
Tensor layer_norm(const Tensor& x, const double* gain, const double* offset, LayerNormCache& cache,
                  double eps = 1e-5);
/// Returns dL/dx; accumulates dL/dgain and dL/doffset.
Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, const double* gain,
                           double* dgain, double* doffset);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
/// Channel slice [c0, c0 + n).
Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t n);
/// dst[..., c0:c0+n] += src.
void add_into_channels(Tensor& dst, const Tensor& src, std::size_t c0);

Tensor upsample_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// Returns dL/dx of shape [in_h, in_w, C].
Tensor upsample_nearest_backward(const Tensor& dy, std::size_t in_h, std::size_t in_w);

Tensor reflect_pad(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left,
                   std::size_t right);
/// Folds padded gradients back onto the source pixels they mirror.
Tensor reflect_pad_backward(const Tensor& dy, std::size_t h, std::size_t w, std::size_t top,
                            std::size_t left);
Tensor crop(const Tensor& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
/// Zero tensor of the padded shape with dy placed at (top, left).
Tensor crop_backward(const Tensor& dy, std::size_t full_h, std::size_t full_w, std::size_t top,
                     std::size_t left);

/// Spatial squeeze/excitation gate: q_p = sigmoid(x_p . w + b), one value per pixel.
std::vector<double> spatial_gate(const Tensor& x, const double* w, const double* b);
/// Given dq = dL/dq, accumulates dw, db and dx.
void spatial_gate_backward(const Tensor& x, const std::vector<double>& q,
                           const std::vector<double>& dq, const double* w, double* dw, double* db,
                           Tensor& dx);

struct ChannelGateCache {
  std::vector<double> mean;
  std::vector<double> hidden_pre;
  std::vector<double> s;
};

/// Channel squeeze/excitation gate: s = sigmoid(W2 relu(W1 mean(x) + b1) + b2),
/// one value per channel. W1 is [C, hidden], W2 is [hidden, C].
std::vector<double> channel_gate(const Tensor& x, const double* w1, const double* b1,
                                 const double* w2, const double* b2, std::size_t hidden,
                                 ChannelGateCache& cache);
void channel_gate_backward(const Tensor& x, const ChannelGateCache& cache,
                           const std::vector<double>& ds, const double* w1, const double* w2,
                           std::size_t hidden, double* dw1, double* db1, double* dw2, double* db2,
                           Tensor& dx);

/// DropBlock multiplier for an [H, W, C] map: blocks of `block` x `block`
/// pixels are zeroed per channel, survivors rescaled by count / kept.
/// Empty when drop_prob is 0.
std::vector<double> dropblock_multiplier(std::size_t h, std::size_t w, std::size_t c,
                                         double drop_prob, std::size_t block, Rng& rng);

/// Throws NumericError naming `where` if `x` holds a non-finite value.
void check_finite(const Tensor& x, const char* where);

}  // namespace tof::nn
