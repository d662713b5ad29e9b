#include "robustae/target.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "robustae/checkpoint.hpp"

namespace robustae::target {

int TargetModel::classify_one(const Tensor& x) const {
  Tensor z = logits(x);
  int best = 0;
  for (int j = 1; j < z.dim(1); ++j)
    if (z.at(0, j) > z.at(0, best)) best = j;
  return best;
}

std::vector<int> TargetModel::classify(const Tensor& x) const {
  Tensor z = logits(x);
  std::vector<int> out(z.dim(0));
  for (int i = 0; i < z.dim(0); ++i) {
    int best = 0;
    for (int j = 1; j < z.dim(1); ++j)
      if (z.at(i, j) > z.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// SmallCnn

SmallCnn::SmallCnn(int num_classes, uint64_t seed)
    : classes_(num_classes),
      c1_(3, 16, 3),
      c2_(16, 16, 3),
      c3_(16, 32, 3),
      c4_(32, 32, 3),
      f1_(32 * 8 * 8, 128),
      f2_(128, num_classes) {
  if (num_classes < 2) throw std::invalid_argument("SmallCnn: need at least 2 classes");
  Rng rng(derive_seed(seed, "smallcnn-init"));
  c1_.init_he(rng);
  c2_.init_he(rng);
  c3_.init_he(rng);
  c4_.init_he(rng);
  f1_.init_he(rng);
  f2_.init_he(rng);
}

nn::ParamMap SmallCnn::params() {
  nn::ParamMap m;
  c1_.register_params(m, "c1");
  c2_.register_params(m, "c2");
  c3_.register_params(m, "c3");
  c4_.register_params(m, "c4");
  f1_.register_params(m, "f1");
  f2_.register_params(m, "f2");
  return m;
}

Tensor SmallCnn::forward(const Tensor& x, Tape* tape) const {
  if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != 32 || x.dim(3) != 32)
    throw std::invalid_argument("SmallCnn: expected N x 3 x 32 x 32 input");
  Tape local;
  Tape& t = tape ? *tape : local;
  t.a1 = c1_.forward(x, &t.c1);
  Tensor h = nn::relu(t.a1);
  t.a2 = c2_.forward(h, &t.c2);
  h = nn::relu(t.a2);
  t.p1_in = Tensor({1, 1, h.dim(2), h.dim(3)});  // only the dims matter
  h = nn::avg_pool2(h);
  t.a3 = c3_.forward(h, &t.c3);
  h = nn::relu(t.a3);
  t.a4 = c4_.forward(h, &t.c4);
  h = nn::relu(t.a4);
  t.p2_in = Tensor({1, 1, h.dim(2), h.dim(3)});
  h = nn::avg_pool2(h);
  h.reshape({h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  t.a5 = f1_.forward(h, &t.f1);
  Tensor h2 = nn::relu(t.a5);
  return f2_.forward(h2, &t.f2);
}

Tensor SmallCnn::backward(const Tape& t, const Tensor& dlogits, nn::GradBuf* gb) const {
  Tensor g = f2_.backward(t.f2, dlogits, gb);
  g = nn::relu_backward(t.a5, g);
  g = f1_.backward(t.f1, g, gb);
  g.reshape({g.dim(0), 32, 8, 8});
  g = nn::avg_pool2_backward(g, t.p2_in.dim(2), t.p2_in.dim(3));
  g = nn::relu_backward(t.a4, g);
  g = c4_.backward(t.c4, g, gb);
  g = nn::relu_backward(t.a3, g);
  g = c3_.backward(t.c3, g, gb);
  g = nn::avg_pool2_backward(g, t.p1_in.dim(2), t.p1_in.dim(3));
  g = nn::relu_backward(t.a2, g);
  g = c2_.backward(t.c2, g, gb);
  g = nn::relu_backward(t.a1, g);
  return c1_.backward(t.c1, g, gb);
}

Tensor SmallCnn::logits(const Tensor& x) const { return forward(x, nullptr); }

TargetModel::LogitsVjp SmallCnn::logits_vjp(const Tensor& x) const {
  auto tape = std::make_shared<Tape>();
  Tensor z = forward(x, tape.get());
  return {std::move(z), [this, tape](const Tensor& dlogits) {
            return backward(*tape, dlogits, nullptr);
          }};
}

// ---------------------------------------------------------------------------
// LinearTarget

LinearTarget::LinearTarget(Tensor w, Tensor b, std::vector<int> input_shape)
    : w_(std::move(w)), b_(std::move(b)), input_shape_(std::move(input_shape)) {
  size_t d = 1;
  for (int v : input_shape_) d *= static_cast<size_t>(v);
  if (w_.ndim() != 2 || static_cast<size_t>(w_.dim(1)) != d || b_.dim(0) != w_.dim(0))
    throw std::invalid_argument("LinearTarget: inconsistent shapes");
}

Tensor LinearTarget::logits(const Tensor& x) const {
  const int n = x.dim(0), c = w_.dim(0), d = w_.dim(1);
  Tensor z({n, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double s = b_[j];
      for (int k = 0; k < d; ++k) s += w_.at(j, k) * x[static_cast<size_t>(i) * d + k];
      z.at(i, j) = s;
    }
  return z;
}

TargetModel::LogitsVjp LinearTarget::logits_vjp(const Tensor& x) const {
  Tensor z = logits(x);
  auto shape = x.shape();
  const int n = x.dim(0), c = w_.dim(0), d = w_.dim(1);
  Tensor w = w_;
  return {std::move(z), [w, shape, n, c, d](const Tensor& dz) {
            Tensor gx(shape);
            for (int i = 0; i < n; ++i)
              for (int k = 0; k < d; ++k) {
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += dz.at(i, j) * w.at(j, k);
                gx[static_cast<size_t>(i) * d + k] = s;
              }
            return gx;
          }};
}

// ---------------------------------------------------------------------------
// Checkpointing / loading

void save_classifier(const std::string& path, SmallCnn& model) {
  nlohmann::json cfg = {{"architecture", "smallcnn-v1"},
                        {"num_classes", model.num_classes()},
                        {"input_size", 32}};
  ckpt::save_container(path, "TGT-v1", cfg, model.params());
}

std::shared_ptr<TargetModel> load_classifier(const ClassifierSpec& spec) {
  if (spec.architecture != "smallcnn-v1")
    throw LoadError("load_classifier: unknown architecture " + spec.architecture);
  nlohmann::json cfg;
  try {
    cfg = ckpt::read_container_config(spec.checkpoint_path, "TGT-v1");
  } catch (const ckpt::CheckpointError& e) {
    throw LoadError(e.what());
  }
  if (cfg.at("architecture") != spec.architecture)
    throw LoadError("load_classifier: checkpoint architecture mismatch");
  if (cfg.at("num_classes").get<int>() != spec.num_classes)
    throw LoadError("load_classifier: class-count mismatch (checkpoint has " +
                    std::to_string(cfg.at("num_classes").get<int>()) + ", spec wants " +
                    std::to_string(spec.num_classes) + ")");
  auto model = std::make_shared<SmallCnn>(spec.num_classes, 0);
  auto params = model->params();
  try {
    ckpt::load_params(spec.checkpoint_path, "TGT-v1", params);
  } catch (const ckpt::CheckpointError& e) {
    throw LoadError(e.what());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Training

CnnTrainResult train_reference_cnn(const data::LabeledSet& ds, uint64_t seed,
                                   const CnnTrainConfig& cfg) {
  if (ds.size() < 10) throw TrainingError("train_reference_cnn: dataset too small");
  const int n = ds.size();
  const int n_val = std::max(1, static_cast<int>(n * cfg.val_frac));
  const int n_train = n - n_val;

  Rng rng(derive_seed(seed, "cnn-train"));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  auto model = std::make_shared<SmallCnn>(ds.num_classes, seed);
  auto params = model->params();
  nn::Adam opt;
  opt.lr = cfg.lr;

  auto gather = [&](const std::vector<int>& idx, size_t lo, size_t hi, Tensor& xb,
                    std::vector<int>& yb) {
    int m = static_cast<int>(hi - lo);
    xb = Tensor({m, 3, 32, 32});
    yb.resize(m);
    for (int i = 0; i < m; ++i) {
      int src = idx[lo + i];
      yb[i] = ds.labels[src];
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) xb.at(i, c, y, x) = ds.images.at(src, c, y, x);
    }
  };

  std::vector<int> train_idx(order.begin(), order.begin() + n_train);
  std::vector<int> val_idx(order.begin() + n_train, order.end());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng.engine());
    double epoch_loss = 0.0;
    int batches = 0;
    for (int lo = 0; lo < n_train; lo += cfg.batch) {
      int hi = std::min(lo + cfg.batch, n_train);
      Tensor xb;
      std::vector<int> yb;
      gather(train_idx, lo, hi, xb, yb);
      SmallCnn::Tape tape;
      Tensor z = model->forward(xb, &tape);
      Tensor dz;
      double loss = nn::softmax_xent(z, yb, &dz);
      if (!std::isfinite(loss))
        throw TrainingError("train_reference_cnn: loss diverged at epoch " +
                            std::to_string(epoch));
      nn::GradBuf gb;
      model->backward(tape, dz, &gb);
      opt.step(params, gb);
      epoch_loss += loss;
      ++batches;
    }
    if (cfg.verbose)
      std::cerr << "cnn epoch " << epoch << " loss " << epoch_loss / std::max(1, batches) << "\n";
  }

  // held-out accuracy
  int correct = 0;
  for (int lo = 0; lo < n_val; lo += cfg.batch) {
    int hi = std::min(lo + cfg.batch, n_val);
    Tensor xb;
    std::vector<int> yb;
    gather(val_idx, lo, hi, xb, yb);
    auto pred = model->classify(xb);
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == yb[i]) ++correct;
  }
  double acc = static_cast<double>(correct) / n_val;
  if (cfg.epochs > 0 && acc < cfg.min_accuracy)
    throw TrainingError("train_reference_cnn: held-out accuracy " + std::to_string(acc) +
                        " below floor " + std::to_string(cfg.min_accuracy) + " (" +
                        std::to_string(n_val) + " validation images, " +
                        std::to_string(cfg.epochs) + " epochs)");
  return {model, acc};
}

}  // namespace robustae::target
