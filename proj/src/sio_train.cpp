#include "robustae/sio_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace robustae::sio {

namespace {

Tensor stack_images(const data::PairSet& pairs, const std::vector<int>& idx, size_t lo,
                    size_t hi, bool uploaded) {
  const Tensor& first = uploaded ? pairs[idx[lo]].uploaded : pairs[idx[lo]].transmitted;
  const int c = first.dim(1), h = first.dim(2), w = first.dim(3);
  const int m = static_cast<int>(hi - lo);
  Tensor out({m, c, h, w});
  for (int i = 0; i < m; ++i) {
    const Tensor& src = uploaded ? pairs[idx[lo + i]].uploaded : pairs[idx[lo + i]].transmitted;
    if (src.dim(1) != c || src.dim(2) != h || src.dim(3) != w)
      throw std::invalid_argument("train_sio: pairs must share one image shape");
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(i, ci, y, x) = src.at(0, ci, y, x);
  }
  return out;
}

// per-image l2 loss and its gradient w.r.t. the prediction
double l2_batch_loss(const Tensor& pred, const Tensor& truth, Tensor* dpred) {
  const int m = pred.dim(0);
  const size_t per = pred.numel() / m;
  if (dpred) *dpred = Tensor(pred.shape());
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double ss = 0.0;
    const size_t base = static_cast<size_t>(i) * per;
    for (size_t k = 0; k < per; ++k) {
      double d = truth[base + k] - pred[base + k];
      ss += d * d;
    }
    double norm = std::sqrt(ss);
    total += norm;
    if (dpred && norm > 1e-12) {
      double scale = 1.0 / (norm * m);
      for (size_t k = 0; k < per; ++k)
        (*dpred)[base + k] = (pred[base + k] - truth[base + k]) * scale;
    }
  }
  return total / m;
}

}  // namespace

double training_loss(const SIOModel& model, const data::PairSet& batch) {
  if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
  double total = 0.0;
  for (const auto& p : batch) {
    Tensor pred = sio_forward(model, p.uploaded);
    Tensor diff = p.transmitted - pred;
    total += l2_norm(diff);
  }
  return total / static_cast<double>(batch.size());
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("TrainLog: cannot write " + path);
  f << "epoch,train_loss,val_loss,lr\n";
  for (const auto& e : epochs)
    f << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.lr << "\n";
}

TrainLog train_sio(SIOModel& model, const data::PairSet& pairs, const TrainConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("train_sio: need at least one pair");

  TrainLog log;
  if (cfg.max_epochs == 0) return log;

  Rng rng(derive_seed(cfg.seed, "sio-train"));
  const int n = static_cast<int>(pairs.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  int n_val = std::max(1, static_cast<int>(n * cfg.val_frac));
  if (n_val >= n) n_val = n > 1 ? 1 : 0;
  const int n_train = n - n_val;
  std::vector<int> train_idx(order.begin(), order.begin() + n_train);
  std::vector<int> val_idx(order.begin() + n_train, order.end());
  if (val_idx.empty()) val_idx = train_idx;  // single-pair degenerate case

  auto params = model.params();
  nn::Adam opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;

  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng.engine());
    double train_loss = 0.0;
    int batches = 0;
    for (size_t lo = 0; lo < train_idx.size(); lo += cfg.batch_size) {
      size_t hi = std::min(lo + cfg.batch_size, train_idx.size());
      Tensor xb = stack_images(pairs, train_idx, lo, hi, true);
      Tensor tb = stack_images(pairs, train_idx, lo, hi, false);
      SioCtx ctx;
      Tensor pred = sio_forward(model, xb, &ctx);
      Tensor dpred;
      double loss = l2_batch_loss(pred, tb, &dpred);
      if (!std::isfinite(loss))
        throw DivergenceError("train_sio: loss diverged (NaN/inf) at epoch " +
                              std::to_string(epoch));
      nn::GradBuf gb;
      sio_backward(model, ctx, dpred, &gb);
      opt.step(params, gb);
      train_loss += loss;
      ++batches;
    }
    train_loss /= std::max(1, batches);

    double val_loss = 0.0;
    for (size_t lo = 0; lo < val_idx.size(); lo += cfg.batch_size) {
      size_t hi = std::min(lo + cfg.batch_size, val_idx.size());
      Tensor xb = stack_images(pairs, val_idx, lo, hi, true);
      Tensor tb = stack_images(pairs, val_idx, lo, hi, false);
      Tensor pred = sio_forward(model, xb);
      val_loss += l2_batch_loss(pred, tb, nullptr) * static_cast<double>(hi - lo);
    }
    val_loss /= static_cast<double>(val_idx.size());

    log.epochs.push_back({epoch, train_loss, val_loss, opt.lr});
    if (cfg.verbose)
      std::cerr << "sio epoch " << epoch << " train " << train_loss << " val " << val_loss
                << " lr " << opt.lr << "\n";

    if (val_loss < best_val) {
      best_val = val_loss;
      stale = 0;
    } else {
      ++stale;
      if (stale >= cfg.plateau_patience) {
        opt.lr *= cfg.plateau_factor;
        stale = 0;
      }
    }
    if (opt.lr < cfg.min_lr) break;
  }
  return log;
}

double ssim_255(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim_255: shape mismatch");
  const int n = a.dim(0), ch = a.dim(1), h = a.dim(2), w = a.dim(3);
  constexpr int kHalf = 3;  // 7x7 window
  constexpr double kSigma = 1.5;
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);

  double kernel[7][7];
  double ksum = 0.0;
  for (int i = -kHalf; i <= kHalf; ++i)
    for (int j = -kHalf; j <= kHalf; ++j) {
      kernel[i + kHalf][j + kHalf] = std::exp(-(i * i + j * j) / (2.0 * kSigma * kSigma));
      ksum += kernel[i + kHalf][j + kHalf];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= ksum;

  double total = 0.0;
  size_t count = 0;
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
          for (int i = -kHalf; i <= kHalf; ++i)
            for (int j = -kHalf; j <= kHalf; ++j) {
              double k = kernel[i + kHalf][j + kHalf];
              int yy = std::clamp(y + i, 0, h - 1), xx = std::clamp(x + j, 0, w - 1);
              ma += k * a.at(s, c, yy, xx);
              mb += k * b.at(s, c, yy, xx);
            }
          for (int i = -kHalf; i <= kHalf; ++i)
            for (int j = -kHalf; j <= kHalf; ++j) {
              double k = kernel[i + kHalf][j + kHalf];
              int yy = std::clamp(y + i, 0, h - 1), xx = std::clamp(x + j, 0, w - 1);
              double da = a.at(s, c, yy, xx) - ma, db = b.at(s, c, yy, xx) - mb;
              va += k * da * da;
              vb += k * db * db;
              cov += k * da * db;
            }
          double num = (2 * ma * mb + c1) * (2 * cov + c2);
          double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
          total += num / den;
          ++count;
        }
  return total / static_cast<double>(count);
}

SimMetrics validate_sim(const SIOModel& model, const data::PairSet& pairs) {
  if (pairs.empty()) throw std::invalid_argument("validate_sim: empty pair set");
  double mse_total = 0.0, psnr_total = 0.0, ssim_total = 0.0;
  for (const auto& p : pairs) {
    Tensor pred = sio_forward(model, p.uploaded);
    Tensor noise_sim = (pred - p.uploaded) * 255.0;
    Tensor noise_true = (p.transmitted - p.uploaded) * 255.0;
    Tensor err = noise_sim - noise_true;
    double mse = 0.0;
    for (size_t i = 0; i < err.numel(); ++i) mse += err[i] * err[i];
    mse /= static_cast<double>(err.numel());
    double psnr = mse <= 0.0 ? 100.0 : std::min(100.0, 10.0 * std::log10(255.0 * 255.0 / mse));
    mse_total += mse;
    psnr_total += psnr;
    ssim_total += ssim_255(noise_sim, noise_true);
  }
  const double m = static_cast<double>(pairs.size());
  return {psnr_total / m, ssim_total / m, mse_total / m};
}

}  // namespace robustae::sio
