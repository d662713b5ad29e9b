#pragma once

#include <string>
#include <vector>

#include "robustae/dataset.hpp"
#include "robustae/sio.hpp"

namespace robustae::sio {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int plateau_patience = 10;    // epochs without val improvement before halving
  double plateau_factor = 0.5;
  double min_lr = 1e-6;         // stop once the schedule drops below this
  int max_epochs = 40;
  int batch_size = 16;
  double val_frac = 0.1;
  uint64_t seed = 0;
  bool verbose = false;

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (plateau_factor <= 0 || plateau_factor >= 1)
      throw std::invalid_argument("TrainConfig: plateau_factor must be in (0,1)");
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  void write_csv(const std::string& path) const;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mean per-image l2 distance between the channel outputs and the surrogate's
/// predictions: (1/M) sum_i ||transmitted_i - sio(uploaded_i)||_2.
double training_loss(const SIOModel& model, const data::PairSet& batch);

/// Fits the surrogate to (uploaded, transmitted) pairs with adaptive-moment
/// updates; the learning rate is halved whenever validation loss fails to
/// improve for plateau_patience consecutive epochs. Deterministic given the
/// seed and pair order. NaN loss aborts with DivergenceError.
TrainLog train_sio(SIOModel& model, const data::PairSet& pairs, const TrainConfig& cfg);

struct SimMetrics {
  double psnr = 0.0;  // dB, capped at 100 for zero error
  double ssim = 0.0;
  double mse = 0.0;   // on the 0..255 scale
};

/// Compares simulated noise (sio(x) - x) against ground-truth channel noise
/// (transmitted - x) on the 0..255 scale; means over the pair set.
SimMetrics validate_sim(const SIOModel& model, const data::PairSet& pairs);

/// Structural similarity with a 7x7 Gaussian window (sigma 1.5) and the
/// standard constants, computed on the 0..255 scale.
double ssim_255(const Tensor& a, const Tensor& b);

}  // namespace robustae::sio
