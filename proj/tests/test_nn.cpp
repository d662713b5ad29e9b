#include "doctest.h"

#include <cmath>

#include "robustae/nn.hpp"
#include "testutil.hpp"

using namespace robustae;
using namespace robustae::nn;

namespace {

Tensor feature_map(int n, int c, int h, int w, uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  return random_uniform({n, c, h, w}, rng, lo, hi);
}

}  // namespace

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(3);
  Conv2d conv(2, 3, 3);
  conv.init_he(rng);
  Tensor x = feature_map(2, 2, 6, 6, 4, -1.0, 1.0);
  Tensor w = testutil::pm1_weights({2, 3, 6, 6}, 5);

  Conv2d::Ctx ctx;
  conv.forward(x, &ctx);
  GradBuf gb;
  Tensor gx = conv.backward(ctx, w, &gb);

  auto loss_x = [&](const Tensor& xx) { return testutil::weighted_sum(conv.forward(xx, nullptr), w); };
  CHECK(testutil::grad_rel_err(gx, testutil::numeric_grad(loss_x, x)) < 1e-6);

  // weight gradient via perturbation of the kernel
  Tensor gw_num = testutil::numeric_grad(
      [&](const Tensor& ww) {
        Conv2d c2 = conv;
        c2.w = ww;
        return testutil::weighted_sum(c2.forward(x, nullptr), w);
      },
      conv.w);
  CHECK(testutil::grad_rel_err(*gb.find(conv.w), gw_num) < 1e-6);
  Tensor gb_num = testutil::numeric_grad(
      [&](const Tensor& bb) {
        Conv2d c2 = conv;
        c2.b = bb;
        return testutil::weighted_sum(c2.forward(x, nullptr), w);
      },
      conv.b);
  CHECK(testutil::grad_rel_err(*gb.find(conv.b), gb_num) < 1e-6);
}

TEST_CASE("pool, upsample and pad primitives invert their backward paths") {
  Tensor x = feature_map(1, 2, 8, 6, 7);
  Tensor w = testutil::pm1_weights({1, 2, 4, 3}, 8);
  Tensor gx = avg_pool2_backward(w, 8, 6);
  CHECK(testutil::grad_rel_err(
            gx, testutil::numeric_grad(
                    [&](const Tensor& xx) { return testutil::weighted_sum(avg_pool2(xx), w); },
                    x)) < 1e-7);

  Tensor wu = testutil::pm1_weights({1, 2, 16, 12}, 9);
  Tensor gu = upsample2_backward(wu);
  CHECK(testutil::grad_rel_err(
            gu, testutil::numeric_grad(
                    [&](const Tensor& xx) { return testutil::weighted_sum(upsample2(xx), wu); },
                    x)) < 1e-7);

  Tensor wp = testutil::pm1_weights({1, 2, 16, 16}, 10);
  Tensor gp = pad_replicate_backward(wp, 8, 6);
  CHECK(testutil::grad_rel_err(
            gp, testutil::numeric_grad(
                    [&](const Tensor& xx) {
                      return testutil::weighted_sum(pad_replicate(xx, 16, 16), wp);
                    },
                    x)) < 1e-7);
}

TEST_CASE("sse gate: zero parameters halve the input") {
  SSEBlock sse(4);
  sse.conv.init_zero();
  Tensor u = feature_map(2, 4, 5, 5, 11);
  Tensor out = sse.forward(u, nullptr);
  for (size_t i = 0; i < u.numel(); ++i) CHECK(out[i] == doctest::Approx(0.5 * u[i]));
}

TEST_CASE("sse gates stay inside (0,1) and saturate toward identity") {
  Rng rng(12);
  SSEBlock sse(3);
  sse.init(rng);
  Tensor u = feature_map(1, 3, 6, 6, 13);
  SSEBlock::Ctx ctx;
  sse.forward(u, &ctx);
  for (size_t i = 0; i < ctx.gate.numel(); ++i) {
    CHECK(ctx.gate[i] > 0.0);
    CHECK(ctx.gate[i] < 1.0);
  }
  // large positive weights on an all-ones input saturate the gate
  SSEBlock sat(3);
  sat.conv.w.fill(50.0);
  sat.conv.b.fill(0.0);
  Tensor ones({1, 3, 4, 4}, 1.0);
  Tensor out = sat.forward(ones, nullptr);
  for (size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cse gate: zero second layer halves the input, pooling is exact") {
  CSEBlock cse(8, 4);
  Rng rng(14);
  cse.init(rng);
  cse.fc2.w.fill(0.0);
  cse.fc2.b.fill(0.0);
  Tensor u = feature_map(2, 8, 4, 4, 15);
  Tensor out = cse.forward(u, nullptr);
  for (size_t i = 0; i < u.numel(); ++i) CHECK(out[i] == doctest::Approx(0.5 * u[i]));

  Tensor constant({1, 8, 4, 4}, 0.37);
  Tensor v1 = global_avg_pool(constant);
  for (size_t i = 0; i < v1.numel(); ++i) CHECK(v1[i] == doctest::Approx(0.37));
}

TEST_CASE("cse output scales each channel by one scalar") {
  CSEBlock cse(4, 2);
  Rng rng(16);
  cse.init(rng);
  Tensor u = feature_map(1, 4, 5, 5, 17, 0.1, 1.0);
  CSEBlock::Ctx ctx;
  Tensor out = cse.forward(u, &ctx);
  CHECK(out.shape() == u.shape());
  for (int c = 0; c < 4; ++c) {
    double ratio = out.at(0, c, 0, 0) / u.at(0, c, 0, 0);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        CHECK(out.at(0, c, i, j) == doctest::Approx(ratio * u.at(0, c, i, j)));
    CHECK(ratio > 0.0);
    CHECK(ratio < 1.0);
  }
}

TEST_CASE("cse rejects a reduction that does not divide the channels") {
  CHECK_THROWS_AS(CSEBlock(6, 4), std::invalid_argument);
}

TEST_CASE("scse is the elementwise max of its branches") {
  SCSEBlock scse(4, 2);
  Rng rng(18);
  scse.init(rng);
  Tensor u = feature_map(2, 4, 4, 4, 19, 0.0, 1.0);
  SCSEBlock::Ctx ctx;
  Tensor out = scse.forward(u, &ctx);
  Tensor a = scse.sse.forward(u, nullptr);
  Tensor b = scse.cse.forward(u, nullptr);
  for (size_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] == doctest::Approx(std::max(a[i], b[i])));
    CHECK(out[i] >= a[i]);  // max dominates each branch on nonnegative input
    CHECK(out[i] >= b[i]);
  }

  // both branches zero-parameterized agree at 0.5*u
  SCSEBlock zero(4, 2);
  zero.sse.conv.init_zero();
  zero.cse.fc1.w.fill(0.0);
  zero.cse.fc1.b.fill(0.0);
  zero.cse.fc2.w.fill(0.0);
  zero.cse.fc2.b.fill(0.0);
  Tensor out0 = zero.forward(u, nullptr);
  for (size_t i = 0; i < u.numel(); ++i) CHECK(out0[i] == doctest::Approx(0.5 * u[i]));
}

TEST_CASE("scse gradient matches finite differences") {
  SCSEBlock scse(4, 2);
  Rng rng(20);
  scse.init(rng);
  Tensor u = feature_map(1, 4, 4, 4, 21, 0.1, 1.0);
  Tensor w = testutil::pm1_weights(u.shape(), 22);
  SCSEBlock::Ctx ctx;
  scse.forward(u, &ctx);
  Tensor gx = scse.backward(ctx, w, nullptr);
  Tensor num = testutil::numeric_grad(
      [&](const Tensor& xx) { return testutil::weighted_sum(scse.forward(xx, nullptr), w); }, u);
  CHECK(testutil::grad_rel_err(gx, num) < 1e-5);
}

TEST_CASE("unet forward shape and zero map at init") {
  UNet net(3, 3, {8, 12, 16, 16}, 4, true);
  Rng rng(23);
  net.init(rng);
  Tensor x = feature_map(1, 3, 32, 32, 24);
  Tensor y = net.forward(x, nullptr);
  CHECK(y.shape() == x.shape());
  // zero-initialized output conv makes the fresh network the zero map
  for (size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
  CHECK_THROWS_AS(net.forward(feature_map(1, 3, 20, 20, 25), nullptr), std::invalid_argument);
}

TEST_CASE("unet gradients match finite differences") {
  UNet net(3, 3, {4, 4, 8, 8}, 4, true);
  Rng rng(26);
  net.init(rng);
  // give the zero-initialized head nonzero weights so gradients flow
  net.out_conv.init_he(rng);
  Tensor x = feature_map(1, 3, 16, 16, 27);
  Tensor w = testutil::pm1_weights(x.shape(), 28);

  UNet::Ctx ctx;
  net.forward(x, &ctx);
  GradBuf gb;
  Tensor gx = net.backward(ctx, w, &gb);
  Tensor num = testutil::numeric_grad(
      [&](const Tensor& xx) { return testutil::weighted_sum(net.forward(xx, nullptr), w); }, x);
  CHECK(testutil::grad_rel_err(gx, num) < 1e-5);

  // spot-check one deep parameter gradient
  nn::ParamMap params;
  net.register_params(params, "unet");
  Tensor* theta = params[2].second;  // enc0.c2.w
  const Tensor* g = gb.find(*theta);
  REQUIRE(g != nullptr);
  Tensor num_w = testutil::numeric_grad(
      [&](const Tensor& ww) {
        UNet n2 = net;
        nn::ParamMap p2;
        n2.register_params(p2, "unet");
        *p2[2].second = ww;
        return testutil::weighted_sum(n2.forward(x, nullptr), w);
      },
      *theta, 1e-5);
  CHECK(testutil::grad_rel_err(*g, num_w) < 1e-5);
}

TEST_CASE("unet without scse forwards and is a different function") {
  UNet net(3, 3, {4, 4, 8, 8}, 4, false);
  Rng rng(29);
  net.init(rng);
  net.out_conv.init_he(rng);
  Tensor x = feature_map(1, 3, 16, 16, 30);
  Tensor y = net.forward(x, nullptr);
  CHECK(y.shape() == x.shape());
}

TEST_CASE("softmax cross entropy agrees with closed forms") {
  Tensor logits({2, 4}, 0.0);
  double ce = softmax_xent(logits, {1, 3}, nullptr);
  CHECK(ce == doctest::Approx(std::log(4.0)));

  Tensor dl;
  Rng rng(31);
  Tensor z = random_uniform({3, 5}, rng, -2.0, 2.0);
  softmax_xent(z, {0, 2, 4}, &dl);
  Tensor num = testutil::numeric_grad(
      [&](const Tensor& zz) { return softmax_xent(zz, {0, 2, 4}, nullptr); }, z);
  CHECK(testutil::grad_rel_err(dl, num) < 1e-7);
}

TEST_CASE("adam determinism") {
  auto run = [&]() {
    Rng rng(32);
    Linear lin(4, 2);
    lin.init_he(rng);
    nn::ParamMap params;
    lin.register_params(params, "lin");
    Adam opt;
    Tensor x = random_uniform({8, 4}, rng, -1, 1);
    for (int step = 0; step < 5; ++step) {
      Linear::Ctx ctx;
      Tensor z = lin.forward(x, &ctx);
      Tensor dz;
      softmax_xent(z, {0, 1, 0, 1, 0, 1, 0, 1}, &dz);
      GradBuf gb;
      lin.backward(ctx, dz, &gb);
      opt.step(params, gb);
    }
    return lin.w;
  };
  Tensor a = run(), b = run();
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}
