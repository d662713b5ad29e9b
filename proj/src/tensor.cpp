#include "robustae/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace robustae {

size_t Tensor::compute_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string("Tensor ") + op + ": shape mismatch");
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  check_same(a, b, "+");
  Tensor r = a;
  for (size_t i = 0; i < r.numel(); ++i) r[i] += b[i];
  return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same(a, b, "-");
  Tensor r = a;
  for (size_t i = 0; i < r.numel(); ++i) r[i] -= b[i];
  return r;
}

Tensor operator*(const Tensor& a, double s) {
  Tensor r = a;
  for (size_t i = 0; i < r.numel(); ++i) r[i] *= s;
  return r;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same(a, b, "hadamard");
  Tensor r = a;
  for (size_t i = 0; i < r.numel(); ++i) r[i] *= b[i];
  return r;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  check_same(x, y, "axpy");
  for (size_t i = 0; i < y.numel(); ++i) y[i] += alpha * x[i];
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor r = a;
  for (size_t i = 0; i < r.numel(); ++i) r[i] = std::clamp(r[i], lo, hi);
  return r;
}

double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

double linf_norm(const Tensor& a) {
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

double mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a[i];
  return s / static_cast<double>(a.numel());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mean_abs_diff");
  if (a.numel() == 0) throw std::invalid_argument("mean_abs_diff of empty tensor");
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.numel());
}

static uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, const std::string& stream) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the stream name
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(master ^ h);
}

Tensor random_uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor random_normal(std::vector<int> shape, Rng& rng, double mu, double sigma) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(mu, sigma);
  return t;
}

}  // namespace robustae
