#include "robustae/jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace robustae::jpeg {

namespace {

constexpr double kPi = std::numbers::pi;

// Annex-K reference tables, natural order.
constexpr std::array<int, 64> kBaseLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kBaseChroma = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

// kZigzagToNatural[i] = natural-order index of the i-th zigzag entry.
constexpr std::array<int, 64> kZigzagToNatural = {
    0,  1,  8,  16, 9,  2,  3,  10,  //
    17, 24, 32, 25, 18, 11, 4,  5,   //
    12, 19, 26, 33, 40, 48, 41, 34,  //
    27, 20, 13, 6,  7,  14, 21, 28,  //
    35, 42, 49, 56, 57, 50, 43, 36,  //
    29, 22, 15, 23, 30, 37, 44, 51,  //
    58, 59, 52, 45, 38, 31, 39, 46,  //
    53, 60, 61, 54, 47, 55, 62, 63};

// Orthonormal 8x8 DCT-II basis; this scaling matches the convention the
// standard quantization tables are defined for.
struct DctBasis {
  double d[8][8];
  DctBasis() {
    for (int u = 0; u < 8; ++u) {
      double a = (u == 0) ? std::sqrt(1.0 / 8.0) : 0.5;
      for (int j = 0; j < 8; ++j)
        d[u][j] = a * std::cos((2 * j + 1) * u * kPi / 16.0);
    }
  }
};
const DctBasis& dct_basis() {
  static const DctBasis b;
  return b;
}

// out = D * in * D^T
void dct8x8(const double* in, double* out) {
  const auto& D = dct_basis().d;
  double tmp[64];
  for (int u = 0; u < 8; ++u)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += D[u][k] * in[k * 8 + j];
      tmp[u * 8 + j] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += tmp[u * 8 + k] * D[v][k];
      out[u * 8 + v] = s;
    }
}

// out = D^T * in * D  (inverse of dct8x8 because D is orthonormal)
void idct8x8(const double* in, double* out) {
  const auto& D = dct_basis().d;
  double tmp[64];
  for (int j = 0; j < 8; ++j)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += D[k][j] * in[k * 8 + v];
      tmp[j * 8 + v] = s;
    }
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += tmp[j * 8 + k] * D[k][i];
      out[j * 8 + i] = s;
    }
}

double apply_round(double u, const RoundingMode& mode) {
  switch (mode.kind) {
    case RoundingMode::Kind::exact:
      return exact_round(u);
    case RoundingMode::Kind::cube:
      return cube_round(u);
    case RoundingMode::Kind::fourier:
      return fourier_round(u, mode.fourier_k);
  }
  return u;
}

double apply_round_grad(double u, const RoundingMode& mode) {
  switch (mode.kind) {
    case RoundingMode::Kind::exact:
      return 0.0;  // flat almost everywhere
    case RoundingMode::Kind::cube:
      return cube_round_grad(u);
    case RoundingMode::Kind::fourier:
      return fourier_round_grad(u, mode.fourier_k);
  }
  return 1.0;
}

// BT.601 full-range forward coefficients; the inverse is derived from them.
constexpr double kYR = 0.299, kYG = 0.587, kYB = 0.114;
constexpr double kCbR = -0.168736, kCbG = -0.331264, kCbB = 0.5;
constexpr double kCrR = 0.5, kCrG = -0.418688, kCrB = -0.081312;
constexpr double kRCr = 1.402;
constexpr double kGCb = -0.344136;
constexpr double kGCr = -0.714136;
constexpr double kBCb = 1.772;

}  // namespace

void QuantTable::validate() const {
  for (int v : luma)
    if (v < 1 || v > 255) throw std::invalid_argument("QuantTable: luma entry outside [1,255]");
  for (int v : chroma)
    if (v < 1 || v > 255) throw std::invalid_argument("QuantTable: chroma entry outside [1,255]");
}

const QuantTable& standard_base_tables() {
  static const QuantTable q{kBaseLuma, kBaseChroma};
  return q;
}

double exact_round(double x) { return std::round(x); }

double cube_round(double x) {
  double r = std::round(x);
  double d = x - r;
  return r + d * d * d;
}

double cube_round_grad(double x) {
  double d = x - std::round(x);
  return 3.0 * d * d;
}

Tensor cube_round(const Tensor& x) {
  if (!x.all_finite()) throw std::invalid_argument("cube_round: non-finite input");
  Tensor r = x;
  for (size_t i = 0; i < r.numel(); ++i) r[i] = cube_round(r[i]);
  return r;
}

double fourier_round(double x, int k_terms) {
  double s = 0.0;
  for (int k = 1; k <= k_terms; ++k) {
    double sign = (k % 2 == 1) ? 1.0 : -1.0;
    s += sign / k * std::sin(2.0 * kPi * k * x);
  }
  return x - s / kPi;
}

double fourier_round_grad(double x, int k_terms) {
  double s = 0.0;
  for (int k = 1; k <= k_terms; ++k) {
    double sign = (k % 2 == 1) ? 1.0 : -1.0;
    s += sign * std::cos(2.0 * kPi * k * x);
  }
  return 1.0 - 2.0 * s;
}

Tensor fourier_round(const Tensor& x, int k_terms) {
  if (k_terms < 1) throw std::invalid_argument("fourier_round: K must be >= 1");
  if (!x.all_finite()) throw std::invalid_argument("fourier_round: non-finite input");
  Tensor r = x;
  for (size_t i = 0; i < r.numel(); ++i) r[i] = fourier_round(r[i], k_terms);
  return r;
}

QuantTable scale_quant_table(const QuantTable& base, QualityFactor qf) {
  qf.validate();
  long scale = (qf.value < 50) ? 5000L / qf.value : 200L - 2L * qf.value;
  QuantTable out;
  for (int i = 0; i < 64; ++i) {
    long l = (base.luma[i] * scale + 50L) / 100L;
    long c = (base.chroma[i] * scale + 50L) / 100L;
    out.luma[i] = static_cast<int>(std::clamp(l, 1L, 255L));
    out.chroma[i] = static_cast<int>(std::clamp(c, 1L, 255L));
  }
  return out;
}

QualityFactor estimate_qf(const QuantTable& extracted) {
  extracted.validate();
  const QuantTable& base = standard_base_tables();
  long best_dist = -1;
  int best_qf = 1;
  for (int q = 1; q <= 100; ++q) {
    QuantTable cand = scale_quant_table(base, QualityFactor(q));
    long dist = 0;
    for (int i = 0; i < 64; ++i) dist += std::abs(cand.luma[i] - extracted.luma[i]);
    if (best_dist < 0 || dist <= best_dist) {  // <= so the larger qf wins ties
      best_dist = dist;
      best_qf = q;
    }
  }
  return QualityFactor(best_qf);
}

QuantTable extract_quant_table(const std::vector<uint8_t>& jpeg_bytes) {
  const auto& b = jpeg_bytes;
  auto need = [&](size_t pos, size_t n) {
    if (pos + n > b.size()) throw ParseError("extract_quant_table: truncated stream");
  };
  need(0, 2);
  if (b[0] != 0xFF || b[1] != 0xD8) throw ParseError("extract_quant_table: missing SOI marker");

  std::array<int, 64> tables[4];
  bool seen[4] = {false, false, false, false};
  bool any_dqt = false;

  size_t pos = 2;
  while (pos < b.size()) {
    // markers may be preceded by fill bytes
    if (b[pos] != 0xFF) throw ParseError("extract_quant_table: expected marker");
    while (pos < b.size() && b[pos] == 0xFF) ++pos;
    if (pos >= b.size()) break;
    uint8_t marker = b[pos++];
    if (marker == 0xD9) break;                       // EOI
    if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) continue;
    need(pos, 2);
    size_t len = (static_cast<size_t>(b[pos]) << 8) | b[pos + 1];
    if (len < 2) throw ParseError("extract_quant_table: bad segment length");
    need(pos, len);
    if (marker == 0xDB) {
      any_dqt = true;
      size_t p = pos + 2, end = pos + len;
      while (p < end) {
        uint8_t pq_tq = b[p++];
        int precision = pq_tq >> 4;
        int id = pq_tq & 0x0F;
        if (id > 3 || precision > 1) throw ParseError("extract_quant_table: bad DQT table spec");
        int step = precision ? 2 : 1;
        if (p + 64 * step > end) throw ParseError("extract_quant_table: truncated DQT table");
        std::array<int, 64> nat{};
        for (int i = 0; i < 64; ++i) {
          int v = precision ? ((b[p] << 8) | b[p + 1]) : b[p];
          p += step;
          nat[kZigzagToNatural[i]] = v;
        }
        tables[id] = nat;
        seen[id] = true;
      }
    }
    if (marker == 0xDA) break;  // SOS: entropy-coded data follows, tables are done
    pos += len;
  }

  if (!any_dqt || !seen[0]) throw ParseError("extract_quant_table: no DQT segment found");
  QuantTable out;
  out.luma = tables[0];
  out.chroma = seen[1] ? tables[1] : tables[0];  // grayscale streams carry one table
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable JPEG pipeline

JpegLayerCtxPtr make_jpeg_ctx() { return std::make_unique<JpegLayerCtx>(); }

namespace {

// Quantize/dequantize one padded plane in place; u_cache (same dims) records
// the pre-round quantizer inputs when backward is requested.
void code_plane(Tensor& plane, int n_idx, int ph, int pw, const std::array<int, 64>& qt,
                const RoundingMode& mode, Tensor* u_cache) {
  const int blocks_y = ph / 8, blocks_x = pw / 8;
#pragma omp parallel for
  for (int bi = 0; bi < blocks_y * blocks_x; ++bi) {
    int by = bi / blocks_x, bx = bi % blocks_x;
    double blk[64], coef[64];
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        blk[i * 8 + j] = plane.at(n_idx, 0, by * 8 + i, bx * 8 + j) - 128.0;
    dct8x8(blk, coef);
    for (int i = 0; i < 64; ++i) {
      double u = coef[i] / qt[i];
      if (u_cache) u_cache->at(n_idx, 0, by * 8 + (i / 8), bx * 8 + (i % 8)) = u;
      coef[i] = apply_round(u, mode) * qt[i];
    }
    idct8x8(coef, blk);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        plane.at(n_idx, 0, by * 8 + i, bx * 8 + j) = blk[i * 8 + j] + 128.0;
  }
}

// Backward of code_plane: grad is d/d(plane output), overwritten with
// d/d(plane input). u_cache holds the cached quantizer inputs.
void code_plane_backward(Tensor& grad, int n_idx, int ph, int pw,
                         const RoundingMode& mode, const Tensor& u_cache) {
  const int blocks_y = ph / 8, blocks_x = pw / 8;
#pragma omp parallel for
  for (int bi = 0; bi < blocks_y * blocks_x; ++bi) {
    int by = bi / blocks_x, bx = bi % blocks_x;
    double g[64], gc[64];
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        g[i * 8 + j] = grad.at(n_idx, 0, by * 8 + i, bx * 8 + j);
    // output = D^T * (round(u) * q) * D + 128  => gCq = D * g * D^T
    dct8x8(g, gc);
    for (int i = 0; i < 64; ++i) {
      double u = u_cache.at(n_idx, 0, by * 8 + (i / 8), bx * 8 + (i % 8));
      // d(round(u)*q)/dCf = round'(u), since u = Cf/q and the q factors cancel
      gc[i] *= apply_round_grad(u, mode);
    }
    // Cf = D * (B-128) * D^T  => gB = D^T * gCf * D
    idct8x8(gc, g);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        grad.at(n_idx, 0, by * 8 + i, bx * 8 + j) = g[i * 8 + j];
  }
}

}  // namespace

Tensor jpeg_layer(const Tensor& x, QualityFactor qf, const RoundingMode& mode, JpegLayerCtx* ctx) {
  qf.validate();
  if (x.ndim() != 4 || x.dim(1) != 3)
    throw std::invalid_argument("jpeg_layer: expected N x 3 x H x W input");
  if (!x.all_finite()) throw std::invalid_argument("jpeg_layer: non-finite input");
  if (mode.kind == RoundingMode::Kind::fourier && mode.fourier_k < 1)
    throw std::invalid_argument("jpeg_layer: Fourier K must be >= 1");

  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int h16 = (h + 15) / 16 * 16, w16 = (w + 15) / 16 * 16;
  const int hc = h16 / 2, wc = w16 / 2;
  const QuantTable qt = scale_quant_table(standard_base_tables(), qf);

  Tensor yp({n, 1, h16, w16}), cbp({n, 1, hc, wc}), crp({n, 1, hc, wc});
  Tensor cb_full({n, 1, h16, w16}), cr_full({n, 1, h16, w16});

  if (ctx) {
    ctx->valid = true;
    ctx->n = n;
    ctx->h = h;
    ctx->w = w;
    ctx->h16 = h16;
    ctx->w16 = w16;
    ctx->mode = mode;
    ctx->q_luma = qt.luma;
    ctx->q_chroma = qt.chroma;
    ctx->u_y = Tensor({n, 1, h16, w16});
    ctx->u_cb = Tensor({n, 1, hc, wc});
    ctx->u_cr = Tensor({n, 1, hc, wc});
    ctx->preclamp = Tensor({n, 3, h, w});
  }

  Tensor out({n, 3, h, w});
  for (int s = 0; s < n; ++s) {
    // color transform + replicate pad, on the 0..255 scale
    for (int i = 0; i < h16; ++i) {
      int si = std::min(i, h - 1);
      for (int j = 0; j < w16; ++j) {
        int sj = std::min(j, w - 1);
        double r = 255.0 * x.at(s, 0, si, sj);
        double g = 255.0 * x.at(s, 1, si, sj);
        double b = 255.0 * x.at(s, 2, si, sj);
        yp.at(s, 0, i, j) = kYR * r + kYG * g + kYB * b;
        cb_full.at(s, 0, i, j) = kCbR * r + kCbG * g + kCbB * b + 128.0;
        cr_full.at(s, 0, i, j) = kCrR * r + kCrG * g + kCrB * b + 128.0;
      }
    }
    // 4:2:0 subsample by 2x2 mean
    for (int i = 0; i < hc; ++i)
      for (int j = 0; j < wc; ++j) {
        double sb = 0.0, sr = 0.0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            sb += cb_full.at(s, 0, 2 * i + di, 2 * j + dj);
            sr += cr_full.at(s, 0, 2 * i + di, 2 * j + dj);
          }
        cbp.at(s, 0, i, j) = sb / 4.0;
        crp.at(s, 0, i, j) = sr / 4.0;
      }

    code_plane(yp, s, h16, w16, qt.luma, mode, ctx ? &ctx->u_y : nullptr);
    code_plane(cbp, s, hc, wc, qt.chroma, mode, ctx ? &ctx->u_cb : nullptr);
    code_plane(crp, s, hc, wc, qt.chroma, mode, ctx ? &ctx->u_cr : nullptr);

    // nearest upsample + inverse color transform + crop
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double yy = yp.at(s, 0, i, j);
        double cb = cbp.at(s, 0, i / 2, j / 2) - 128.0;
        double cr = crp.at(s, 0, i / 2, j / 2) - 128.0;
        double r = (yy + kRCr * cr) / 255.0;
        double g = (yy + kGCb * cb + kGCr * cr) / 255.0;
        double b = (yy + kBCb * cb) / 255.0;
        if (ctx) {
          ctx->preclamp.at(s, 0, i, j) = r;
          ctx->preclamp.at(s, 1, i, j) = g;
          ctx->preclamp.at(s, 2, i, j) = b;
        }
        out.at(s, 0, i, j) = std::clamp(r, 0.0, 1.0);
        out.at(s, 1, i, j) = std::clamp(g, 0.0, 1.0);
        out.at(s, 2, i, j) = std::clamp(b, 0.0, 1.0);
      }
  }
  return out;
}

Tensor jpeg_layer_backward(const JpegLayerCtx& ctx, const Tensor& grad_out) {
  if (!ctx.valid) throw std::logic_error("jpeg_layer_backward: ctx has no forward state");
  const int n = ctx.n, h = ctx.h, w = ctx.w, h16 = ctx.h16, w16 = ctx.w16;
  const int hc = h16 / 2, wc = w16 / 2;
  if (grad_out.ndim() != 4 || grad_out.dim(0) != n || grad_out.dim(1) != 3 ||
      grad_out.dim(2) != h || grad_out.dim(3) != w)
    throw std::invalid_argument("jpeg_layer_backward: grad shape mismatch");

  Tensor gx({n, 3, h, w});
  Tensor gy({n, 1, h16, w16}), gcb({n, 1, hc, wc}), gcr({n, 1, hc, wc});

  for (int s = 0; s < n; ++s) {
    // clamp gate, /255, inverse color transpose, crop-to-pad and
    // nearest-upsample backward, all fused
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        auto gate = [&](int c) {
          double v = ctx.preclamp.at(s, c, i, j);
          return (v >= 0.0 && v <= 1.0) ? grad_out.at(s, c, i, j) / 255.0 : 0.0;
        };
        double gr = gate(0), gg = gate(1), gb = gate(2);
        gy.at(s, 0, i, j) = gr + gg + gb;
        gcb.at(s, 0, i / 2, j / 2) += kGCb * gg + kBCb * gb;
        gcr.at(s, 0, i / 2, j / 2) += kRCr * gr + kGCr * gg;
      }

    code_plane_backward(gy, s, h16, w16, ctx.mode, ctx.u_y);
    code_plane_backward(gcb, s, hc, wc, ctx.mode, ctx.u_cb);
    code_plane_backward(gcr, s, hc, wc, ctx.mode, ctx.u_cr);

    // subsample backward (spread /4), replicate-pad backward (fold onto the
    // clamped source pixel), forward color transpose, x255
    for (int i = 0; i < h16; ++i) {
      int si = std::min(i, h - 1);
      for (int j = 0; j < w16; ++j) {
        int sj = std::min(j, w - 1);
        double gyy = gy.at(s, 0, i, j);
        double gcbf = gcb.at(s, 0, i / 2, j / 2) / 4.0;
        double gcrf = gcr.at(s, 0, i / 2, j / 2) / 4.0;
        gx.at(s, 0, si, sj) += 255.0 * (kYR * gyy + kCbR * gcbf + kCrR * gcrf);
        gx.at(s, 1, si, sj) += 255.0 * (kYG * gyy + kCbG * gcbf + kCrG * gcrf);
        gx.at(s, 2, si, sj) += 255.0 * (kYB * gyy + kCbB * gcbf + kCrB * gcrf);
      }
    }
  }
  return gx;
}

}  // namespace robustae::jpeg
