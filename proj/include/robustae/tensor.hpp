#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace robustae {

/// Dense row-major tensor of doubles. Images use NCHW layout with values
/// in [0,1] at module boundaries.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(compute_numel(shape_), 0.0);
  }
  Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    data_.assign(compute_numel(shape_), fill);
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  size_t numel() const { return data_.size(); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // 4-D accessors (NCHW)
  double& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }
  // 2-D accessors (rows, cols)
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }

  void fill(double v) { data_.assign(data_.size(), v); }

  /// In-place reshape; total element count must be preserved.
  void reshape(std::vector<int> shape) {
    if (compute_numel(shape) != data_.size())
      throw std::invalid_argument("Tensor::reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  bool all_finite() const;

 private:
  size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w;
  }
  static size_t compute_numel(const std::vector<int>& shape);

  std::vector<int> shape_;
  std::vector<double> data_;
};

// Elementwise helpers used across modules.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
void axpy(double alpha, const Tensor& x, Tensor& y);  // y += alpha * x
Tensor clamp(const Tensor& a, double lo, double hi);
double l2_norm(const Tensor& a);
double linf_norm(const Tensor& a);
double mean(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
double mean_abs_diff(const Tensor& a, const Tensor& b);

/// Deterministic RNG used everywhere randomness is needed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mu, double sigma) {
    return std::normal_distribution<double>(mu, sigma)(eng_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(eng_);
  }
  uint64_t next_u64() { return eng_(); }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

/// Stable sub-seed derivation: one master seed, one stream per stage name.
uint64_t derive_seed(uint64_t master, const std::string& stream);

Tensor random_uniform(std::vector<int> shape, Rng& rng, double lo = 0.0, double hi = 1.0);
Tensor random_normal(std::vector<int> shape, Rng& rng, double mu = 0.0, double sigma = 1.0);

}  // namespace robustae
