#include "doctest.h"

#include <cmath>

#include "robustae/evaluate.hpp"
#include "testutil.hpp"

using namespace robustae;
using namespace robustae::eval;

namespace {

EvalRecord rec(int y, int pred_clean, int pred_transmitted) {
  EvalRecord r;
  r.y = y;
  r.pred_clean = pred_clean;
  r.pred_transmitted = pred_transmitted;
  return r;
}

}  // namespace

TEST_CASE("asr counts bare and transmitted outcomes separately") {
  CHECK_THROWS_AS(asr({}), std::invalid_argument);

  std::vector<EvalRecord> all = {rec(0, 1, 1), rec(1, 0, 0), rec(2, 3, 3)};
  AsrPair p = asr(all);
  CHECK(p.asr == doctest::Approx(1.0));
  CHECK(p.asr_prime == doctest::Approx(1.0));

  std::vector<EvalRecord> mixed = {rec(0, 1, 1), rec(0, 1, 0), rec(0, 1, 2), rec(0, 0, 0)};
  AsrPair q = asr(mixed);  // 3 of 4 fool the bare model, 2 of 4 after the channel
  CHECK(q.asr == doctest::Approx(0.75));
  CHECK(q.asr_prime == doctest::Approx(0.5));

  std::vector<EvalRecord> none = {rec(0, 0, 0), rec(1, 1, 1)};
  AsrPair z = asr(none);
  CHECK(z.asr == doctest::Approx(0.0));
  CHECK(z.asr_prime == doctest::Approx(0.0));
}

TEST_CASE("acl closed forms on linear targets") {
  // uniform logits: 0.5 for either v on 2 classes
  Tensor w({2, 2}, 0.0);
  Tensor b({2}, 0.0);
  target::LinearTarget uniform(w, b, {1, 1, 2});
  Tensor imgs({1, 1, 1, 2}, 0.3);
  CHECK(acl(imgs, {0}, uniform, true) == doctest::Approx(0.5));
  CHECK(acl(imgs, {0}, uniform, false) == doctest::Approx(0.5));

  // logits [ln 3, 0] puts softmax 0.75 on class 0
  Tensor b2({2});
  b2[0] = std::log(3.0);
  b2[1] = 0.0;
  target::LinearTarget skewed(w, b2, {1, 1, 2});
  CHECK(acl(imgs, {0}, skewed, true) == doctest::Approx(0.75));
  CHECK(acl(imgs, {0}, skewed, false) == doctest::Approx(0.25));

  // with c=2 the two views are complementary per image
  CHECK(acl(imgs, {1}, skewed, true) + acl(imgs, {1}, skewed, false) == doctest::Approx(1.0));

  CHECK_THROWS_AS(acl(Tensor({0, 1, 1, 2}), {}, uniform, true), std::invalid_argument);
}

TEST_CASE("bit depth reduction quantizer") {
  CHECK_THROWS_AS(bit_depth_reduce(Tensor({1}, 0.5), 0), std::invalid_argument);
  CHECK_THROWS_AS(bit_depth_reduce(Tensor({1}, 0.5), 9), std::invalid_argument);

  // one bit: 0.5 rounds half-up to 1
  CHECK(bit_depth_reduce(Tensor({1}, 0.5), 1)[0] == doctest::Approx(1.0));
  CHECK(bit_depth_reduce(Tensor({1}, 0.49), 1)[0] == doctest::Approx(0.0));

  // eight bits: identity on data already on the 8-bit grid
  Tensor x({8});
  for (int i = 0; i < 8; ++i) x[i] = (i * 31) / 255.0;
  Tensor y = bit_depth_reduce(x, 8);
  CHECK(max_abs_diff(x, y) < 1e-12);
}

TEST_CASE("jpeg defense leaves mid-gray alone") {
  Tensor gray({1, 3, 32, 32}, 128.0 / 255.0);
  Tensor out = jpeg_defense(gray, 75);
  CHECK(max_abs_diff(out, gray) <= 1.0 / 255.0);
}

TEST_CASE("random resize-pad is seeded and shape preserving") {
  Tensor x = testutil::smooth_image(32, 32, 5);
  Tensor a = random_resize_pad(x, 42);
  Tensor b = random_resize_pad(x, 42);
  Tensor c = random_resize_pad(x, 43);
  CHECK(a.shape() == x.shape());
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, c) > 0.0);  // different seed moves the content
}

TEST_CASE("defense string parsing") {
  int p = 0;
  CHECK(defense_from_string("none", &p) == Defense::none);
  CHECK(defense_from_string("bitred:4", &p) == Defense::bit_red);
  CHECK(p == 4);
  CHECK(defense_from_string("jpeg:75", &p) == Defense::jpeg);
  CHECK(p == 75);
  CHECK(defense_from_string("jpeg", &p) == Defense::jpeg);
  CHECK(p == 75);  // default
  CHECK(defense_from_string("rrp", &p) == Defense::resize_pad);
  CHECK_THROWS_AS(defense_from_string("fd", &p), std::invalid_argument);
}

TEST_CASE("error analysis trivial identities and split reporting") {
  // channel: qf=100 on exact mid-gray is the identity; a fresh no-tail
  // surrogate is the identity as well
  channel::ChannelSpec spec;
  spec.id = "test-q100";
  spec.jpeg_qf = jpeg::QualityFactor(100);

  sio::SIOConfig scfg;
  scfg.widths = {4, 4, 8, 8};
  scfg.use_jpeg_tail = false;
  sio::SIOModel surrogate(scfg, 7);

  target::SmallCnn model(10, 8);
  Tensor gray({1, 3, 32, 32}, 128.0 / 255.0);
  int pred = model.classify_one(gray);

  // half the labels match the prediction (fail split), half do not (success)
  std::vector<Tensor> aes = {gray, gray, gray, gray};
  std::vector<int> labels = {pred, pred, (pred + 1) % 10, (pred + 2) % 10};
  ErrorAnalysis ea = error_analysis(aes, labels, spec, surrogate, model);
  REQUIRE(ea.success.has_value());
  REQUIRE(ea.fail.has_value());
  CHECK(ea.success->count == 2);
  CHECK(ea.fail->count == 2);
  CHECK(ea.success->osn_noise_mse == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ea.success->sim_error_mse == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ea.fail->osn_noise_mse == doctest::Approx(0.0).epsilon(1e-12));

  // single-split case: every AE "fails"
  ErrorAnalysis one = error_analysis({gray}, {pred}, spec, surrogate, model);
  CHECK_FALSE(one.success.has_value());
  REQUIRE(one.fail.has_value());
  CHECK(one.fail->count == 1);

  CHECK_THROWS_AS(error_analysis({}, {}, spec, surrogate, model), std::invalid_argument);
}

TEST_CASE("evaluate_aes wires the defense after the channel") {
  channel::ChannelSpec spec = channel::ChannelSpec::preset("mock-alt");
  target::SmallCnn model(10, 9);
  Tensor img = testutil::smooth_image(32, 32, 10);
  std::vector<Tensor> aes = {img};
  std::vector<int> labels = {3};
  auto plain = evaluate_aes(aes, aes, labels, spec, model);
  REQUIRE(plain.size() == 1);
  CHECK(plain[0].y == 3);
  CHECK(plain[0].l2 == doctest::Approx(0.0));
  CHECK(static_cast<int>(plain[0].logits_clean.size()) == 10);

  auto defended = evaluate_aes(aes, aes, labels, spec, model, Defense::bit_red, 4);
  REQUIRE(defended.size() == 1);
  // records stay well-formed under a defense; verdicts may differ
  CHECK(static_cast<int>(defended[0].logits_transmitted.size()) == 10);
}
