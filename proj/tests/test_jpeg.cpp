#include "doctest.h"

#include <cmath>

#include "jpeg_reference.hpp"
#include "robustae/image_io.hpp"
#include "robustae/jpeg.hpp"
#include "testutil.hpp"

using namespace robustae;
using namespace robustae::jpeg;

TEST_CASE("cube rounding values") {
  CHECK(cube_round(2.0) == doctest::Approx(2.0).epsilon(1e-15));
  // rounding 1.5 half away from zero gives 2, cube pulls back by 0.125
  CHECK(cube_round(1.5) == doctest::Approx(1.875).epsilon(1e-15));
  CHECK(std::abs(cube_round(1.5) - exact_round(1.5)) == doctest::Approx(0.125));
  CHECK(cube_round(0.25) == doctest::Approx(0.015625).epsilon(1e-15));
  CHECK(cube_round(-1.5) == doctest::Approx(-1.875).epsilon(1e-15));
}

TEST_CASE("cube rounding error bound on a dense grid") {
  double max_err = 0.0;
  std::vector<double> arg_at_max;
  for (int i = -48 * 16; i <= 48 * 16; ++i) {
    double x = i / 16.0;  // includes exact half-integers
    double err = std::abs(cube_round(x) - exact_round(x));
    CHECK(err <= 0.125 + 1e-12);
    if (err > max_err) {
      max_err = err;
      arg_at_max.assign(1, x);
    } else if (err == max_err && err > 0.124) {
      arg_at_max.push_back(x);
    }
  }
  CHECK(max_err == doctest::Approx(0.125).epsilon(1e-12));
  for (double x : arg_at_max)
    CHECK(std::abs(x - exact_round(x)) == doctest::Approx(0.5));  // only at half-integers
}

TEST_CASE("fourier rounding values and monotone accuracy") {
  CHECK(fourier_round(3.0, 5) == doctest::Approx(3.0).epsilon(1e-12));
  // 0.25 - (1/pi) sin(pi/2)
  CHECK(fourier_round(0.25, 1) == doctest::Approx(0.25 - 1.0 / 3.14159265358979323846));
  CHECK_THROWS_AS(fourier_round(Tensor({2}, 0.3), 0), std::invalid_argument);

  double prev = 1e9;
  for (int k = 1; k <= 20; ++k) {
    double total = 0.0;
    int count = 0;
    for (int i = -2 * 256; i <= 2 * 256; ++i) {
      double x = i / 256.0;
      total += std::abs(fourier_round(x, k) - exact_round(x));
      ++count;
    }
    double mean_err = total / count;
    CHECK(mean_err < prev);
    prev = mean_err;
  }
}

TEST_CASE("quant table scaling follows the standard convention") {
  const QuantTable& q0 = standard_base_tables();

  QuantTable at50 = scale_quant_table(q0, QualityFactor(50));
  CHECK(at50.luma == q0.luma);
  CHECK(at50.chroma == q0.chroma);

  QuantTable at100 = scale_quant_table(q0, QualityFactor(100));
  for (int i = 0; i < 64; ++i) {
    CHECK(at100.luma[i] == 1);
    CHECK(at100.chroma[i] == 1);
  }

  QuantTable at92 = scale_quant_table(q0, QualityFactor(92));
  auto ref = jpeg_reference::ref_scale_table(jpeg_reference::ref_base_luma(), 92);
  for (int i = 0; i < 64; ++i) CHECK(at92.luma[i] == ref[i]);

  CHECK_THROWS_AS(QualityFactor(0), std::invalid_argument);
  CHECK_THROWS_AS(QualityFactor(101), std::invalid_argument);
}

TEST_CASE("qf estimation round-trips the scaling map") {
  const QuantTable& q0 = standard_base_tables();
  CHECK(estimate_qf(q0).value == 50);
  CHECK(estimate_qf(scale_quant_table(q0, QualityFactor(92))).value == 92);
  for (int q = 10; q <= 95; q += 5)
    CHECK(estimate_qf(scale_quant_table(q0, QualityFactor(q))).value == q);
}

TEST_CASE("estimate_qf breaks ties toward the larger qf") {
  // at the top of the range many qf values give the all-ones table
  QuantTable ones;
  ones.luma.fill(1);
  ones.chroma.fill(1);
  int est = estimate_qf(ones).value;
  QuantTable back = scale_quant_table(standard_base_tables(), QualityFactor(est));
  CHECK(back.luma == ones.luma);
  for (int q = est + 1; q <= 100; ++q) {
    QuantTable other = scale_quant_table(standard_base_tables(), QualityFactor(q));
    CHECK(other.luma != ones.luma);  // est is the largest qf achieving the table
  }
}

TEST_CASE("quant tables parse out of real encoder output") {
  Tensor img = testutil::smooth_image(32, 32, 11);
  auto bytes = io::encode_jpeg(img, 75);
  QuantTable parsed = extract_quant_table(bytes);
  QuantTable expect = scale_quant_table(standard_base_tables(), QualityFactor(75));
  CHECK(parsed.luma == expect.luma);
  CHECK(parsed.chroma == expect.chroma);
}

TEST_CASE("DQT parsing edge cases") {
  // no DQT at all
  std::vector<uint8_t> no_dqt = {0xFF, 0xD8, 0xFF, 0xD9};
  CHECK_THROWS_AS(extract_quant_table(no_dqt), ParseError);
  CHECK_THROWS_AS(extract_quant_table({0x00, 0x01}), ParseError);

  // two separate single-table DQT segments
  QuantTable want = scale_quant_table(standard_base_tables(), QualityFactor(40));
  const int zz[64] = {0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
                      12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
                      35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
                      58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};
  std::vector<uint8_t> stream = {0xFF, 0xD8};
  for (int id = 0; id < 2; ++id) {
    stream.push_back(0xFF);
    stream.push_back(0xDB);
    stream.push_back(0x00);
    stream.push_back(67);  // 2 + 1 + 64
    stream.push_back(static_cast<uint8_t>(id));
    const auto& table = id == 0 ? want.luma : want.chroma;
    for (int i = 0; i < 64; ++i) stream.push_back(static_cast<uint8_t>(table[zz[i]]));
  }
  stream.push_back(0xFF);
  stream.push_back(0xD9);
  QuantTable got = extract_quant_table(stream);
  CHECK(got.luma == want.luma);
  CHECK(got.chroma == want.chroma);
}

TEST_CASE("jpeg_layer keeps mid-gray fixed") {
  Tensor gray({1, 3, 32, 32}, 128.0 / 255.0);
  for (int qf : {30, 75, 100}) {
    Tensor out = jpeg_layer(gray, QualityFactor(qf), RoundingMode::exact());
    CHECK(max_abs_diff(out, gray) <= 1.0 / 255.0);
  }
}

TEST_CASE("jpeg_layer matches the independent straightforward reference") {
  for (uint64_t seed : {1, 2, 3}) {
    Tensor img = testutil::random_image(1, 64, 64, seed);
    for (int qf : {50, 92}) {
      Tensor ours = jpeg_layer(img, QualityFactor(qf), RoundingMode::exact());
      Tensor ref = jpeg_reference::ref_jpeg_roundtrip(img, qf);
      CHECK(max_abs_diff(ours, ref) <= 1.0 / 255.0);
    }
  }
}

TEST_CASE("jpeg_layer input validation and output range") {
  Tensor img = testutil::random_image(2, 24, 40, 5);  // exercises padding
  Tensor out = jpeg_layer(img, QualityFactor(60), RoundingMode::cube());
  CHECK(out.shape() == img.shape());
  for (size_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] >= 0.0);
    CHECK(out[i] <= 1.0);
  }
  Tensor bad = img;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(jpeg_layer(bad, QualityFactor(60), RoundingMode::exact()),
                  std::invalid_argument);
}

TEST_CASE("cube mode stays close to exact mode") {
  Tensor img = testutil::random_image(1, 64, 64, 9);
  Tensor exact = jpeg_layer(img, QualityFactor(92), RoundingMode::exact());
  Tensor cube = jpeg_layer(img, QualityFactor(92), RoundingMode::cube());
  CHECK(mean_abs_diff(exact, cube) <= 2.0 / 255.0);
}

TEST_CASE("cube beats fourier(10) in image-level l2 error") {
  for (int qf : {30, 60, 90}) {
    double cube_l2 = 0.0, fourier_l2 = 0.0;
    for (uint64_t seed = 0; seed < 4; ++seed) {
      Tensor img = testutil::random_image(1, 32, 32, 100 + seed);
      Tensor exact = jpeg_layer(img, QualityFactor(qf), RoundingMode::exact());
      cube_l2 += l2_norm(jpeg_layer(img, QualityFactor(qf), RoundingMode::cube()) - exact);
      fourier_l2 +=
          l2_norm(jpeg_layer(img, QualityFactor(qf), RoundingMode::fourier(10)) - exact);
    }
    CHECK(cube_l2 / 4.0 <= fourier_l2 / 4.0);
  }
}

TEST_CASE("jpeg_layer gradient matches finite differences (fourier mode)") {
  Tensor img = testutil::random_image(1, 16, 16, 21);
  Tensor w = testutil::pm1_weights(img.shape(), 22);
  RoundingMode mode = RoundingMode::fourier(10);
  QualityFactor qf(75);

  JpegLayerCtx ctx;
  jpeg_layer(img, qf, mode, &ctx);
  Tensor analytic = jpeg_layer_backward(ctx, w);
  Tensor numeric = testutil::numeric_grad(
      [&](const Tensor& x) { return testutil::weighted_sum(jpeg_layer(x, qf, mode), w); },
      img, 1e-6);
  CHECK(testutil::grad_rel_err(analytic, numeric) < 1e-2);
}

TEST_CASE("jpeg_layer gradient matches finite differences (cube mode)") {
  Tensor img = testutil::random_image(1, 16, 16, 31);
  Tensor w = testutil::pm1_weights(img.shape(), 32);
  RoundingMode mode = RoundingMode::cube();
  QualityFactor qf(75);

  JpegLayerCtx ctx;
  jpeg_layer(img, qf, mode, &ctx);
  Tensor analytic = jpeg_layer_backward(ctx, w);
  Tensor numeric = testutil::numeric_grad(
      [&](const Tensor& x) { return testutil::weighted_sum(jpeg_layer(x, qf, mode), w); },
      img, 1e-6);
  CHECK(testutil::grad_rel_err(analytic, numeric) < 1e-2);
}
