#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "robustae/tensor.hpp"

namespace robustae::jpeg {

/// 8x8 quantization matrices in natural (row-major) order, as stored in a
/// JPEG header. Every entry must lie in [1, 255].
struct QuantTable {
  std::array<int, 64> luma{};
  std::array<int, 64> chroma{};

  void validate() const;
};

/// Scalar JPEG quality factor, valid range [1, 100].
struct QualityFactor {
  int value = 75;

  QualityFactor() = default;
  explicit QualityFactor(int v) : value(v) { validate(); }
  void validate() const {
    if (value < 1 || value > 100)
      throw std::invalid_argument("QualityFactor: value must be in [1,100]");
  }
};

/// How the quantizer rounds DCT coefficients.
struct RoundingMode {
  enum class Kind { exact, cube, fourier };
  Kind kind = Kind::exact;
  int fourier_k = 10;

  static RoundingMode exact() { return {Kind::exact, 10}; }
  static RoundingMode cube() { return {Kind::cube, 10}; }
  static RoundingMode fourier(int k) {
    if (k < 1) throw std::invalid_argument("RoundingMode: Fourier K must be >= 1");
    return {Kind::fourier, k};
  }
};

/// The standard base tables (the public reference tables used by common
/// encoders at quality 50).
const QuantTable& standard_base_tables();

/// round(x) + (x - round(x))^3, elementwise. Round-half-away-from-zero base.
double cube_round(double x);
Tensor cube_round(const Tensor& x);
/// Derivative treating the embedded round() as locally constant.
double cube_round_grad(double x);

/// x - (1/pi) * sum_{k=1..K} ((-1)^{k+1}/k) sin(2 pi k x), elementwise.
double fourier_round(double x, int k_terms);
Tensor fourier_round(const Tensor& x, int k_terms);
double fourier_round_grad(double x, int k_terms);

/// Round-half-away-from-zero (the exact-mode convention).
double exact_round(double x);

/// libjpeg convention: scale = 5000/qf if qf < 50 else 200 - 2*qf;
/// entry = clamp(floor((base*scale + 50) / 100), 1, 255).
QuantTable scale_quant_table(const QuantTable& base, QualityFactor qf);

/// argmin over qf in [1,100] of the L1 distance between extracted.luma and
/// scale_quant_table(Q0, qf).luma; ties broken toward the larger qf.
QualityFactor estimate_qf(const QuantTable& extracted);

/// Parses the DQT segments of a JFIF stream. Tables are de-zigzagged into
/// natural order; table id 0 is luma, id 1 chroma. Throws ParseError on a
/// malformed stream or when no DQT segment is present.
QuantTable extract_quant_table(const std::vector<uint8_t>& jpeg_bytes);

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Backward state for jpeg_layer: the pre-round quantizer inputs per plane
/// and the output before the final clamp. Everything else in the pipeline is
/// linear and recomputed on the fly.
struct JpegLayerCtx {
  bool valid = false;
  int n = 0, h = 0, w = 0, h16 = 0, w16 = 0;
  RoundingMode mode;
  std::array<int, 64> q_luma{}, q_chroma{};
  Tensor u_y, u_cb, u_cr;
  Tensor preclamp;
};
using JpegLayerCtxPtr = std::unique_ptr<JpegLayerCtx>;
JpegLayerCtxPtr make_jpeg_ctx();

/// Differentiable JPEG encode-decode pipeline on the [0,255] internal scale:
/// RGB->YCbCr (BT.601 full range), replicate-pad to multiples of 16, 4:2:0
/// chroma subsampling by 2x2 mean, 8x8 orthonormal DCT-II, quantization with
/// per-mode rounding, dequantization, inverse DCT, nearest-neighbor chroma
/// upsampling, YCbCr->RGB, crop, rescale to [0,1] and clamp.
///
/// Input must be N x 3 x H x W with finite values. Output shape equals input
/// shape. Pass a ctx to enable jpeg_layer_backward.
Tensor jpeg_layer(const Tensor& x, QualityFactor qf, const RoundingMode& mode,
                  JpegLayerCtx* ctx = nullptr);

/// Gradient of jpeg_layer w.r.t. its input. In Exact mode the rounding
/// derivative is zero almost everywhere, so gradients vanish; use Cube or
/// Fourier for differentiable paths.
Tensor jpeg_layer_backward(const JpegLayerCtx& ctx, const Tensor& grad_out);

}  // namespace robustae::jpeg
