#pragma once

// Independent straightforward JPEG encode-decode oracle. Deliberately written
// from the textbook definitions (direct 2-D DCT sums, scalar loops, its own
// rounding and table scaling) so it shares no code path with the library.

#include <array>
#include <cmath>

#include "robustae/tensor.hpp"

namespace jpeg_reference {

using robustae::Tensor;

inline double ref_round(double x) {  // half away from zero
  return x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5);
}

inline std::array<int, 64> ref_scale_table(const std::array<int, 64>& base, int qf) {
  std::array<int, 64> out{};
  int scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
  for (int i = 0; i < 64; ++i) {
    int v = (base[i] * scale + 50) / 100;
    if (v < 1) v = 1;
    if (v > 255) v = 255;
    out[i] = v;
  }
  return out;
}

inline const std::array<int, 64>& ref_base_luma() {
  static const std::array<int, 64> t = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  return t;
}

inline const std::array<int, 64>& ref_base_chroma() {
  static const std::array<int, 64> t = {
      17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
      24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
      99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
      99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};
  return t;
}

// direct 2-D type-II DCT of one 8x8 block, standard JPEG scaling
inline void ref_dct(const double in[8][8], double out[8][8]) {
  const double pi = 3.14159265358979323846;
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
      double cv = v == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
      double s = 0.0;
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          s += in[i][j] * std::cos((2 * i + 1) * u * pi / 16.0) *
               std::cos((2 * j + 1) * v * pi / 16.0);
      out[u][v] = 0.25 * cu * cv * s;
    }
}

inline void ref_idct(const double in[8][8], double out[8][8]) {
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
          double cv = v == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
          s += cu * cv * in[u][v] * std::cos((2 * i + 1) * u * pi / 16.0) *
               std::cos((2 * j + 1) * v * pi / 16.0);
        }
      out[i][j] = 0.25 * s;
    }
}

// quantize-dequantize every 8x8 block of a plane in place
inline void ref_code_plane(std::vector<std::vector<double>>& plane,
                           const std::array<int, 64>& qt) {
  int h = static_cast<int>(plane.size()), w = static_cast<int>(plane[0].size());
  for (int by = 0; by < h / 8; ++by)
    for (int bx = 0; bx < w / 8; ++bx) {
      double blk[8][8], coef[8][8];
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) blk[i][j] = plane[by * 8 + i][bx * 8 + j] - 128.0;
      ref_dct(blk, coef);
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          int q = qt[u * 8 + v];
          coef[u][v] = ref_round(coef[u][v] / q) * q;
        }
      ref_idct(coef, blk);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) plane[by * 8 + i][bx * 8 + j] = blk[i][j] + 128.0;
    }
}

/// Full oracle round trip matching the library conventions: BT.601 full-range
/// color, replicate pad to x16, 4:2:0 mean subsample, nearest upsample,
/// round-half-away-from-zero quantization.
inline Tensor ref_jpeg_roundtrip(const Tensor& img, int qf) {
  const int h = img.dim(2), w = img.dim(3);
  const int hp = (h + 15) / 16 * 16, wp = (w + 15) / 16 * 16;
  auto qY = ref_scale_table(ref_base_luma(), qf);
  auto qC = ref_scale_table(ref_base_chroma(), qf);

  std::vector<std::vector<double>> Y(hp, std::vector<double>(wp));
  std::vector<std::vector<double>> Cb(hp, std::vector<double>(wp));
  std::vector<std::vector<double>> Cr(hp, std::vector<double>(wp));
  for (int i = 0; i < hp; ++i)
    for (int j = 0; j < wp; ++j) {
      int si = i < h ? i : h - 1, sj = j < w ? j : w - 1;
      double r = 255.0 * img.at(0, 0, si, sj);
      double g = 255.0 * img.at(0, 1, si, sj);
      double b = 255.0 * img.at(0, 2, si, sj);
      Y[i][j] = 0.299 * r + 0.587 * g + 0.114 * b;
      Cb[i][j] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
      Cr[i][j] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }

  int hc = hp / 2, wc = wp / 2;
  std::vector<std::vector<double>> cb2(hc, std::vector<double>(wc));
  std::vector<std::vector<double>> cr2(hc, std::vector<double>(wc));
  for (int i = 0; i < hc; ++i)
    for (int j = 0; j < wc; ++j) {
      cb2[i][j] = (Cb[2 * i][2 * j] + Cb[2 * i][2 * j + 1] + Cb[2 * i + 1][2 * j] +
                   Cb[2 * i + 1][2 * j + 1]) / 4.0;
      cr2[i][j] = (Cr[2 * i][2 * j] + Cr[2 * i][2 * j + 1] + Cr[2 * i + 1][2 * j] +
                   Cr[2 * i + 1][2 * j + 1]) / 4.0;
    }

  ref_code_plane(Y, qY);
  ref_code_plane(cb2, qC);
  ref_code_plane(cr2, qC);

  Tensor out({1, 3, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double y = Y[i][j];
      double cb = cb2[i / 2][j / 2] - 128.0;
      double cr = cr2[i / 2][j / 2] - 128.0;
      double r = (y + 1.402 * cr) / 255.0;
      double g = (y - 0.344136 * cb - 0.714136 * cr) / 255.0;
      double b = (y + 1.772 * cb) / 255.0;
      out.at(0, 0, i, j) = std::clamp(r, 0.0, 1.0);
      out.at(0, 1, i, j) = std::clamp(g, 0.0, 1.0);
      out.at(0, 2, i, j) = std::clamp(b, 0.0, 1.0);
    }
  return out;
}

}  // namespace jpeg_reference
