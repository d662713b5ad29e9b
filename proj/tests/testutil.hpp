#pragma once

#include <cmath>
#include <functional>

#include "robustae/tensor.hpp"

namespace testutil {

using robustae::Rng;
using robustae::Tensor;

/// Central finite differences of a scalar function of a tensor.
inline Tensor numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                           double h = 1e-5) {
  Tensor g(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double grad_rel_err(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < analytic.numel(); ++i) {
    double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nb += numeric[i] * numeric[i];
  }
  double denom = std::max(std::sqrt(na), std::sqrt(nb));
  if (denom < 1e-30) return 0.0;
  return std::sqrt(diff) / denom;
}

/// Random image away from the clamp boundaries.
inline Tensor random_image(int n, int h, int w, uint64_t seed) {
  Rng rng(seed);
  return robustae::random_uniform({n, 3, h, w}, rng, 0.05, 0.95);
}

/// Fixed +-1 weights turning a tensor-valued map into a scalar loss.
inline Tensor pm1_weights(const std::vector<int>& shape, uint64_t seed) {
  Rng rng(seed);
  Tensor w(shape);
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  return w;
}

inline double weighted_sum(const Tensor& t, const Tensor& w) {
  double s = 0.0;
  for (size_t i = 0; i < t.numel(); ++i) s += t[i] * w[i];
  return s;
}

/// Smooth synthetic image (gradient + blobs), for codec comparisons where
/// white-noise chroma would be unrepresentative.
inline Tensor smooth_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor img({1, 3, h, w});
  double cx = rng.uniform(0.2, 0.8) * w, cy = rng.uniform(0.2, 0.8) * h;
  double r0 = rng.uniform(0.1, 0.4), g0 = rng.uniform(0.1, 0.4), b0 = rng.uniform(0.1, 0.4);
  double amp = rng.uniform(0.3, 0.5), rad = rng.uniform(4.0, h / 2.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double d2 = ((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (rad * rad);
      double blob = amp * std::exp(-d2);
      img.at(0, 0, i, j) = r0 + 0.4 * i / h + blob;
      img.at(0, 1, i, j) = g0 + 0.4 * j / w + blob * 0.5;
      img.at(0, 2, i, j) = b0 + 0.2 * (i + j) / (h + w) + blob * 0.8;
    }
  return robustae::clamp(img, 0.02, 0.98);
}

}  // namespace testutil
