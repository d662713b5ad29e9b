#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "robustae/tensor.hpp"

namespace robustae::nn {

/// Named parameter registry; ordering is deterministic and is the checkpoint
/// layout.
using ParamMap = std::vector<std::pair<std::string, Tensor*>>;

/// Per-step gradient storage keyed by parameter address. Each training step
/// (or attack) owns its own GradBuf, so read-only models stay shareable.
struct GradBuf {
  std::unordered_map<const Tensor*, Tensor> grads;

  Tensor& of(const Tensor& p) {
    auto it = grads.find(&p);
    if (it == grads.end())
      it = grads.emplace(&p, Tensor(p.shape())).first;
    return it->second;
  }
  const Tensor* find(const Tensor& p) const {
    auto it = grads.find(&p);
    return it == grads.end() ? nullptr : &it->second;
  }
  void clear() { grads.clear(); }
};

/// Adaptive-moment optimizer (the usual first/second moment estimates with
/// bias correction).
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;

  void step(const ParamMap& params, const GradBuf& grads);

 private:
  std::unordered_map<const Tensor*, std::pair<Tensor, Tensor>> state_;
};

// ---------------------------------------------------------------------------
// Layers. forward() is const and keeps all per-call state in the caller-owned
// Ctx, so concurrent inference on distinct inputs is safe. backward() is also
// const; parameter gradients go to the GradBuf when one is supplied.

struct Conv2d {
  Tensor w;  // (cout, cin*k*k)
  Tensor b;  // (cout)
  int cin = 0, cout = 0, ksize = 0;

  Conv2d() = default;
  Conv2d(int cin_, int cout_, int k);

  struct Ctx {
    Tensor x;
  };
  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init_he(Rng& rng);
  void init_zero();
  void register_params(ParamMap& m, const std::string& prefix);
};

struct Linear {
  Tensor w;  // (out, in)
  Tensor b;  // (out)
  int in = 0, out = 0;

  Linear() = default;
  Linear(int in_, int out_);

  struct Ctx {
    Tensor x;
  };
  Tensor forward(const Tensor& x, Ctx* ctx) const;  // x: (N, in)
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init_he(Rng& rng);
  void register_params(ParamMap& m, const std::string& prefix);
};

// Stateless spatial ops.
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& gout);
Tensor sigmoid(const Tensor& x);
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& gout, int h_in, int w_in);
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& gout);
Tensor global_avg_pool(const Tensor& x);                           // (N,C,H,W) -> (N,C)
Tensor global_avg_pool_backward(const Tensor& gout, int h, int w); // -> (N,C,H,W)
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_a);
/// Replicate-pad on the right/bottom to the given size; backward folds the
/// padded gradients back onto their source pixels.
Tensor pad_replicate(const Tensor& x, int h_to, int w_to);
Tensor pad_replicate_backward(const Tensor& gout, int h_from, int w_from);
Tensor crop(const Tensor& x, int h_to, int w_to);
Tensor crop_backward(const Tensor& gout, int h_to, int w_to);

/// Channel squeeze-and-excitation: a global-average-pooled descriptor is
/// passed through a two-layer gate and scales each channel.
struct CSEBlock {
  Linear fc1, fc2;
  int channels = 0, reduction = 0;

  CSEBlock() = default;
  CSEBlock(int channels_, int reduction_);

  struct Ctx {
    Tensor x, v1, a, r, gate;
    Linear::Ctx f1, f2;
  };
  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init(Rng& rng);
  void register_params(ParamMap& m, const std::string& prefix);
};

/// Spatial squeeze-and-excitation: a 1x1 convolution produces a sigmoid gate
/// per pixel that scales every channel.
struct SSEBlock {
  Conv2d conv;  // C -> 1, 1x1

  SSEBlock() = default;
  explicit SSEBlock(int channels);

  struct Ctx {
    Tensor x, gate;
    Conv2d::Ctx c;
  };
  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init(Rng& rng);
  void register_params(ParamMap& m, const std::string& prefix);
};

/// Elementwise max of the SSE and CSE recalibrations.
struct SCSEBlock {
  SSEBlock sse;
  CSEBlock cse;

  SCSEBlock() = default;
  SCSEBlock(int channels, int reduction);

  struct Ctx {
    SSEBlock::Ctx s;
    CSEBlock::Ctx c;
    Tensor a, bb;
  };
  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init(Rng& rng);
  void register_params(ParamMap& m, const std::string& prefix);
};

/// Two 3x3 convolutions, each followed by ReLU. No normalization layers, so
/// single-image inference is deterministic.
struct ConvBlock {
  Conv2d c1, c2;

  ConvBlock() = default;
  ConvBlock(int cin, int cout);

  struct Ctx {
    Conv2d::Ctx k1, k2;
    Tensor a1, a2;  // pre-activation outputs
  };
  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init(Rng& rng);
  void register_params(ParamMap& m, const std::string& prefix);
};

/// Four-stage encoder/decoder with skip connections. Encoder conv blocks are
/// followed by CSE gates, decoder blocks by SCSE gates; a final 1x1
/// convolution maps back to out_ch. The final conv is zero-initialized so a
/// fresh network is the zero map.
struct UNet {
  int in_ch = 3, out_ch = 3;
  std::array<int, 4> widths{16, 32, 64, 128};
  int reduction = 16;
  bool use_scse = true;

  ConvBlock enc[4];
  CSEBlock enc_cse[4];
  ConvBlock bott;
  ConvBlock dec[4];  // dec[k] consumes the skip from enc[k]
  SCSEBlock dec_scse[4];
  Conv2d out_conv;

  UNet() = default;
  UNet(int in_ch_, int out_ch_, std::array<int, 4> widths_, int reduction_, bool use_scse_);

  struct Ctx;
  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const;

  void init(Rng& rng);
  void register_params(ParamMap& m, const std::string& prefix);

  /// Reduction actually used for a stage: capped so the squeezed width stays
  /// at least 4 and always divides the channel count.
  static int effective_reduction(int channels, int reduction);
};

struct UNet::Ctx {
  ConvBlock::Ctx enc_cb[4], bott_cb, dec_cb[4];
  CSEBlock::Ctx enc_gate[4];
  SCSEBlock::Ctx dec_gate[4];
  Conv2d::Ctx out_c;
  Tensor e[4];     // gated encoder outputs (skip connections)
  int h = 0, w = 0;
};

/// Mean softmax cross-entropy over the batch; fills dlogits when given.
double softmax_xent(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits);
Tensor softmax_rows(const Tensor& logits);

}  // namespace robustae::nn
