#include "robustae/sio.hpp"

#include <algorithm>

#include "robustae/checkpoint.hpp"

namespace robustae::sio {

SIOModel::SIOModel(const SIOConfig& cfg, uint64_t seed)
    : config(cfg), unet(3, 3, cfg.widths, cfg.reduction, cfg.use_scse) {
  Rng rng(derive_seed(seed, "sio-init"));
  unet.init(rng);
}

nn::ParamMap SIOModel::params() {
  nn::ParamMap m;
  unet.register_params(m, "unet");
  return m;
}

Tensor sio_forward(const SIOModel& model, const Tensor& x, SioCtx* ctx) {
  if (x.ndim() != 4 || x.dim(1) != 3)
    throw std::invalid_argument("sio_forward: expected N x 3 x H x W input");
  if (!x.all_finite()) throw std::invalid_argument("sio_forward: non-finite input");

  const int h = x.dim(2), w = x.dim(3);
  const int hp = (h + 15) / 16 * 16, wp = (w + 15) / 16 * 16;
  const bool padded = (hp != h || wp != w);

  SioCtx local;
  SioCtx& c = ctx ? *ctx : local;
  c.h = h;
  c.w = w;
  c.hp = hp;
  c.wp = wp;
  c.padded = padded;
  c.valid = true;

  Tensor xp = padded ? nn::pad_replicate(x, hp, wp) : x;
  Tensor y = model.unet.forward(xp, ctx ? &c.unet : nullptr);
  if (model.config.use_residual) axpy(1.0, xp, y);
  c.preclamp = y;
  y = clamp(y, 0.0, 1.0);

  Tensor out;
  if (model.config.use_jpeg_tail) {
    if (ctx) c.jpeg_ctx = jpeg::make_jpeg_ctx();
    out = jpeg::jpeg_layer(y, model.config.q, model.config.mode, ctx ? c.jpeg_ctx.get() : nullptr);
  } else {
    out = std::move(y);
  }
  return padded ? nn::crop(out, h, w) : out;
}

Tensor sio_backward(const SIOModel& model, const SioCtx& ctx, const Tensor& gout,
                    nn::GradBuf* gb) {
  if (!ctx.valid) throw std::logic_error("sio_backward: ctx has no forward state");
  Tensor g = ctx.padded ? nn::crop_backward(gout, ctx.hp, ctx.wp) : gout;
  if (model.config.use_jpeg_tail)
    g = jpeg::jpeg_layer_backward(*ctx.jpeg_ctx, g);
  // clamp gate
  for (size_t i = 0; i < g.numel(); ++i) {
    double v = ctx.preclamp[i];
    if (v < 0.0 || v > 1.0) g[i] = 0.0;
  }
  Tensor gx_p = model.unet.backward(ctx.unet, g, gb);
  if (model.config.use_residual) axpy(1.0, g, gx_p);
  return ctx.padded ? nn::pad_replicate_backward(gx_p, ctx.h, ctx.w) : gx_p;
}

namespace {

nlohmann::json config_to_json(const SIOConfig& c) {
  std::string mode;
  switch (c.mode.kind) {
    case jpeg::RoundingMode::Kind::exact: mode = "exact"; break;
    case jpeg::RoundingMode::Kind::cube: mode = "cube"; break;
    case jpeg::RoundingMode::Kind::fourier: mode = "fourier"; break;
  }
  return {{"depth", SIOConfig::depth},
          {"widths", c.widths},
          {"q", c.q.value},
          {"mode", mode},
          {"fourier_k", c.mode.fourier_k},
          {"reduction", c.reduction},
          {"use_residual", c.use_residual},
          {"use_jpeg_tail", c.use_jpeg_tail},
          {"use_scse", c.use_scse}};
}

SIOConfig config_from_json(const nlohmann::json& j) {
  SIOConfig c;
  auto ws = j.at("widths").get<std::vector<int>>();
  if (ws.size() != 4) throw ckpt::CheckpointError("SIO config: expected 4 stage widths");
  std::copy(ws.begin(), ws.end(), c.widths.begin());
  c.q = jpeg::QualityFactor(j.at("q").get<int>());
  std::string mode = j.at("mode").get<std::string>();
  if (mode == "exact")
    c.mode = jpeg::RoundingMode::exact();
  else if (mode == "cube")
    c.mode = jpeg::RoundingMode::cube();
  else if (mode == "fourier")
    c.mode = jpeg::RoundingMode::fourier(j.at("fourier_k").get<int>());
  else
    throw ckpt::CheckpointError("SIO config: unknown rounding mode " + mode);
  c.reduction = j.at("reduction").get<int>();
  c.use_residual = j.at("use_residual").get<bool>();
  c.use_jpeg_tail = j.at("use_jpeg_tail").get<bool>();
  c.use_scse = j.at("use_scse").get<bool>();
  return c;
}

}  // namespace

void save_sio(const std::string& path, SIOModel& model) {
  ckpt::save_container(path, "SIO-v1", config_to_json(model.config), model.params());
}

SIOModel load_sio(const std::string& path) {
  SIOConfig cfg = config_from_json(ckpt::read_container_config(path, "SIO-v1"));
  SIOModel model(cfg);
  ckpt::load_params(path, "SIO-v1", model.params());
  return model;
}

}  // namespace robustae::sio
