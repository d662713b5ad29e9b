#include "doctest.h"

#include <cmath>

#include "robustae/sio_train.hpp"
#include "testutil.hpp"

using namespace robustae;
using namespace robustae::sio;

namespace {

SIOConfig tiny_config() {
  SIOConfig cfg;
  cfg.widths = {4, 4, 8, 8};
  cfg.q = jpeg::QualityFactor(80);
  cfg.mode = jpeg::RoundingMode::cube();
  return cfg;
}

data::PairSet identity_pairs(int n, uint64_t seed) {
  data::PairSet pairs;
  for (int i = 0; i < n; ++i) {
    data::TransmissionPair p;
    p.uploaded = testutil::random_image(1, 32, 32, seed + i);
    p.transmitted = p.uploaded;  // identity channel
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace

TEST_CASE("training loss closed forms") {
  SIOModel model(tiny_config(), 1);
  CHECK_THROWS_AS(training_loss(model, {}), std::invalid_argument);

  // a model whose output matches the target exactly
  data::TransmissionPair p;
  p.uploaded = testutil::random_image(1, 32, 32, 2);
  p.transmitted = sio_forward(model, p.uploaded);
  CHECK(training_loss(model, {p}) == doctest::Approx(0.0).epsilon(1e-12));

  // constant offset of 0.1 over d elements has l2 norm 0.1 * sqrt(d)
  data::TransmissionPair q = p;
  for (size_t i = 0; i < q.transmitted.numel(); ++i) q.transmitted[i] += 0.1;
  double d = static_cast<double>(q.transmitted.numel());
  CHECK(training_loss(model, {q}) == doctest::Approx(0.1 * std::sqrt(d)).epsilon(1e-9));

  CHECK(training_loss(model, {p, q}) >= 0.0);
}

TEST_CASE("train_sio with zero epochs returns the model unchanged") {
  SIOModel model(tiny_config(), 3);
  SIOModel before = model;
  TrainConfig cfg;
  cfg.max_epochs = 0;
  auto log = train_sio(model, identity_pairs(4, 10), cfg);
  CHECK(log.epochs.empty());
  auto pa = before.params();
  auto pb = model.params();
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i].second->numel(); ++j)
      CHECK((*pa[i].second)[j] == (*pb[i].second)[j]);
}

TEST_CASE("plateau schedule halves the learning rate exactly") {
  SIOModel model(tiny_config(), 4);
  TrainConfig cfg;
  cfg.max_epochs = 7;
  cfg.plateau_patience = 2;
  cfg.lr = 1e-4;
  cfg.batch_size = 4;
  // an untrainable fixture: uploaded equals transmitted equals constant, so
  // validation loss is flat from the start
  data::PairSet pairs;
  for (int i = 0; i < 4; ++i) {
    data::TransmissionPair p;
    p.uploaded = Tensor({1, 3, 32, 32}, 128.0 / 255.0);
    p.transmitted = p.uploaded;
    pairs.push_back(p);
  }
  auto log = train_sio(model, pairs, cfg);
  REQUIRE(log.epochs.size() >= 5);
  CHECK(log.epochs[0].lr == doctest::Approx(1e-4));
  bool halved = false;
  for (size_t i = 1; i < log.epochs.size(); ++i) {
    double ratio = log.epochs[i].lr / log.epochs[i - 1].lr;
    CHECK((ratio == doctest::Approx(1.0) || ratio == doctest::Approx(0.5)));
    if (ratio < 0.9) halved = true;
  }
  CHECK(halved);
}

TEST_CASE("training is deterministic given the seed") {
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 77;
  auto pairs = identity_pairs(6, 30);
  auto run = [&]() {
    SIOModel model(tiny_config(), 5);
    train_sio(model, pairs, cfg);
    return model;
  };
  SIOModel a = run(), b = run();
  auto pa = a.params(), pb = b.params();
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i].second->numel(); ++j)
      CHECK((*pa[i].second)[j] == (*pb[i].second)[j]);
}

TEST_CASE("loss decreases on a learnable fixture and diverges loudly on NaN") {
  SIOModel model(tiny_config(), 6);
  auto pairs = identity_pairs(8, 50);
  double before = training_loss(model, pairs);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  train_sio(model, pairs, cfg);
  double after = training_loss(model, pairs);
  CHECK(after < before);

  data::PairSet poisoned = pairs;
  poisoned[0].transmitted[0] = std::numeric_limits<double>::quiet_NaN();
  SIOModel fresh(tiny_config(), 7);
  TrainConfig cfg2;
  cfg2.max_epochs = 1;
  CHECK_THROWS_AS(train_sio(fresh, poisoned, cfg2), DivergenceError);
}

TEST_CASE("validate_sim closed forms") {
  SIOModel model(tiny_config(), 8);
  CHECK_THROWS_AS(validate_sim(model, {}), std::invalid_argument);

  // simulated noise identical to true noise: zero error metrics
  data::TransmissionPair p;
  p.uploaded = testutil::random_image(1, 32, 32, 9);
  p.transmitted = sio_forward(model, p.uploaded);
  SimMetrics m = validate_sim(model, {p});
  CHECK(m.mse == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(m.psnr == doctest::Approx(100.0));
  CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-9));

  // true noise offset by exactly 1/255 in [0,1] units = 1 on the 0..255 scale
  data::TransmissionPair q = p;
  for (size_t i = 0; i < q.transmitted.numel(); ++i) q.transmitted[i] += 1.0 / 255.0;
  SimMetrics m2 = validate_sim(model, {q});
  CHECK(m2.mse == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m2.psnr == doctest::Approx(48.1308).epsilon(1e-4));
}

TEST_CASE("train config validation") {
  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  TrainConfig bad2;
  bad2.plateau_factor = 1.5;
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}
