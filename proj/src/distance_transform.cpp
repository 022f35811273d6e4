#include "tof/distance_transform.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace tof {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void transform_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                  std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates the whole line.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = q - v[j];
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace

Tensor squared_distance_to(const ByteArray& feature) {
  require_rank(feature, 2, "feature");
  const std::size_t h = feature.dim(0);
  const std::size_t w = feature.dim(1);
  Tensor out({h, w}, kInf);
  for (std::size_t i = 0; i < feature.size(); ++i) {
    if (feature[i]) out[i] = 0.0;
  }
  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  f.resize(h);
  d.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = out(y, x);
    transform_1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) out(y, x) = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = out(y, x);
    transform_1d(f, d, v, z);
    for (std::size_t x = 0; x < w; ++x) out(y, x) = d[x];
  }
  return out;
}

Tensor euclidean_distance_to(const ByteArray& feature) {
  Tensor out = squared_distance_to(feature);
  for (auto& v : out.storage()) v = std::sqrt(v);
  return out;
}

}  // namespace tof
