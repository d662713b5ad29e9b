#pragma once

#include <memory>
#include <string>

#include "robustae/jpeg.hpp"
#include "robustae/nn.hpp"

namespace robustae::sio {

/// Configuration of the channel surrogate: a four-stage encoder/decoder with
/// a residual shortcut whose output feeds a differentiable JPEG tail at a
/// fixed quality factor. The ablation switches turn individual pieces off.
struct SIOConfig {
  std::array<int, 4> widths{16, 32, 64, 128};
  jpeg::QualityFactor q{80};
  jpeg::RoundingMode mode = jpeg::RoundingMode::cube();
  int reduction = 16;
  bool use_residual = true;
  bool use_jpeg_tail = true;
  bool use_scse = true;

  static constexpr int depth = 4;
};

struct SIOModel {
  SIOConfig config;
  nn::UNet unet;

  SIOModel() = default;
  explicit SIOModel(const SIOConfig& cfg, uint64_t seed = 0);

  nn::ParamMap params();
};

/// Per-forward state for sio_backward.
struct SioCtx {
  nn::UNet::Ctx unet;
  jpeg::JpegLayerCtxPtr jpeg_ctx;
  Tensor preclamp;
  int h = 0, w = 0, hp = 0, wp = 0;
  bool padded = false;
  bool valid = false;
};

/// The surrogate map: jpeg_layer(clamp(net(x) + x), q) with the residual and
/// JPEG pieces subject to the config switches. Differentiable end to end;
/// output has the input's shape and lies in [0,1].
Tensor sio_forward(const SIOModel& model, const Tensor& x, SioCtx* ctx = nullptr);

/// Gradient w.r.t. the input; parameter gradients go to gb when given.
Tensor sio_backward(const SIOModel& model, const SioCtx& ctx, const Tensor& gout,
                    nn::GradBuf* gb = nullptr);

// Checkpoint container, magic "SIO-v1".
void save_sio(const std::string& path, SIOModel& model);
SIOModel load_sio(const std::string& path);

}  // namespace robustae::sio
