#include "robustae/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace robustae::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

// Gather the 3x3 (or 1x1) neighborhoods of one sample into a (cin*k*k, h*w)
// row-major matrix, zero-padded at the borders.
void im2col(const Tensor& x, int s, int k, std::vector<double>& col) {
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pad = k / 2;
  col.assign(static_cast<size_t>(c) * k * k * h * w, 0.0);
  size_t row = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj, ++row) {
        double* dst = col.data() + row * static_cast<size_t>(h) * w;
        for (int i = 0; i < h; ++i) {
          int si = i + di - pad;
          if (si < 0 || si >= h) continue;
          for (int j = 0; j < w; ++j) {
            int sj = j + dj - pad;
            if (sj < 0 || sj >= w) continue;
            dst[i * w + j] = x.at(s, ci, si, sj);
          }
        }
      }
}

// Scatter-add a column matrix back into the gradient image of one sample.
void col2im_add(const std::vector<double>& col, int s, int k, Tensor& gx) {
  const int c = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const int pad = k / 2;
  size_t row = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj, ++row) {
        const double* src = col.data() + row * static_cast<size_t>(h) * w;
        for (int i = 0; i < h; ++i) {
          int si = i + di - pad;
          if (si < 0 || si >= h) continue;
          for (int j = 0; j < w; ++j) {
            int sj = j + dj - pad;
            if (sj < 0 || sj >= w) continue;
            gx.at(s, ci, si, sj) += src[i * w + j];
          }
        }
      }
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

void Adam::step(const ParamMap& params, const GradBuf& grads) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, step_count);
  const double bc2 = 1.0 - std::pow(beta2, step_count);
  for (const auto& [name, p] : params) {
    const Tensor* g = grads.find(*p);
    if (!g) continue;
    auto it = state_.find(p);
    if (it == state_.end())
      it = state_.emplace(p, std::make_pair(Tensor(p->shape()), Tensor(p->shape()))).first;
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (size_t i = 0; i < p->numel(); ++i) {
      double gi = (*g)[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      (*p)[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int cin_, int cout_, int k)
    : w({cout_, cin_ * k * k}), b({cout_}), cin(cin_), cout(cout_), ksize(k) {
  if (k != 1 && k != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
}

void Conv2d::init_he(Rng& rng) {
  double stddev = std::sqrt(2.0 / (cin * ksize * ksize));
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
  b.fill(0.0);
}

void Conv2d::init_zero() {
  w.fill(0.0);
  b.fill(0.0);
}

void Conv2d::register_params(ParamMap& m, const std::string& prefix) {
  m.emplace_back(prefix + ".w", &w);
  m.emplace_back(prefix + ".b", &b);
}

Tensor Conv2d::forward(const Tensor& x, Ctx* ctx) const {
  if (x.ndim() != 4 || x.dim(1) != cin)
    throw std::invalid_argument("Conv2d: input channel mismatch");
  const int n = x.dim(0), h = x.dim(2), w_ = x.dim(3);
  Tensor out({n, cout, h, w_});
  if (ctx) ctx->x = x;

  const size_t hw = static_cast<size_t>(h) * w_;
  const int kk = cin * ksize * ksize;
  MapC wm(w.data(), cout, kk);

  if (ksize == 1) {
#pragma omp parallel for
    for (int s = 0; s < n; ++s) {
      MapC xm(x.data() + static_cast<size_t>(s) * cin * hw, cin, hw);
      MapM om(out.data() + static_cast<size_t>(s) * cout * hw, cout, hw);
      om.noalias() = wm * xm;
      for (int co = 0; co < cout; ++co) om.row(co).array() += b[co];
    }
    return out;
  }

#pragma omp parallel
  {
    std::vector<double> col;
#pragma omp for
    for (int s = 0; s < n; ++s) {
      im2col(x, s, ksize, col);
      MapC cm(col.data(), kk, hw);
      MapM om(out.data() + static_cast<size_t>(s) * cout * hw, cout, hw);
      om.noalias() = wm * cm;
      for (int co = 0; co < cout; ++co) om.row(co).array() += b[co];
    }
  }
  return out;
}

Tensor Conv2d::backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const {
  const Tensor& x = ctx.x;
  const int n = x.dim(0), h = x.dim(2), w_ = x.dim(3);
  const size_t hw = static_cast<size_t>(h) * w_;
  const int kk = cin * ksize * ksize;
  Tensor gx({n, cin, h, w_});
  MapC wm(w.data(), cout, kk);

  Tensor* gw = nullptr;
  Tensor* gbias = nullptr;
  if (gb) {
    gw = &gb->of(w);
    gbias = &gb->of(b);
  }

  std::vector<double> col, gcol;
  for (int s = 0; s < n; ++s) {
    MapC gm(gout.data() + static_cast<size_t>(s) * cout * hw, cout, hw);
    if (ksize == 1) {
      MapM gxm(gx.data() + static_cast<size_t>(s) * cin * hw, cin, hw);
      gxm.noalias() = wm.transpose() * gm;
      if (gw) {
        MapC xm(x.data() + static_cast<size_t>(s) * cin * hw, cin, hw);
        MapM gwm(gw->data(), cout, kk);
        gwm.noalias() += gm * xm.transpose();
      }
    } else {
      gcol.assign(static_cast<size_t>(kk) * hw, 0.0);
      MapM gcm(gcol.data(), kk, hw);
      gcm.noalias() = wm.transpose() * gm;
      col2im_add(gcol, s, ksize, gx);
      if (gw) {
        im2col(x, s, ksize, col);
        MapC cm(col.data(), kk, hw);
        MapM gwm(gw->data(), cout, kk);
        gwm.noalias() += gm * cm.transpose();
      }
    }
    if (gbias)
      for (int co = 0; co < cout; ++co) (*gbias)[co] += gm.row(co).sum();
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in_, int out_) : w({out_, in_}), b({out_}), in(in_), out(out_) {}

void Linear::init_he(Rng& rng) {
  double stddev = std::sqrt(2.0 / in);
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
  b.fill(0.0);
}

void Linear::register_params(ParamMap& m, const std::string& prefix) {
  m.emplace_back(prefix + ".w", &w);
  m.emplace_back(prefix + ".b", &b);
}

Tensor Linear::forward(const Tensor& x, Ctx* ctx) const {
  if (x.ndim() != 2 || x.dim(1) != in)
    throw std::invalid_argument("Linear: input shape mismatch");
  const int n = x.dim(0);
  if (ctx) ctx->x = x;
  Tensor y({n, out});
  MapC xm(x.data(), n, in);
  MapC wm(w.data(), out, in);
  MapM ym(y.data(), n, out);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out; ++j) y.at(i, j) += b[j];
  return y;
}

Tensor Linear::backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const {
  const Tensor& x = ctx.x;
  const int n = x.dim(0);
  Tensor gx({n, in});
  MapC gm(gout.data(), n, out);
  MapC wm(w.data(), out, in);
  MapM gxm(gx.data(), n, in);
  gxm.noalias() = gm * wm;
  if (gb) {
    Tensor& gw = gb->of(w);
    Tensor& gbias = gb->of(b);
    MapC xm(x.data(), n, in);
    MapM gwm(gw.data(), out, in);
    gwm.noalias() += gm.transpose() * xm;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out; ++j) gbias[j] += gout.at(i, j);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Stateless ops

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::max(y[i], 0.0);
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& gout) {
  Tensor g = gout;
  for (size_t i = 0; i < g.numel(); ++i)
    if (x[i] <= 0.0) g[i] = 0.0;
  return g;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (size_t i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  return y;
}

Tensor avg_pool2(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd spatial size");
  Tensor y({n, c, h / 2, w / 2});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h / 2; ++i)
        for (int j = 0; j < w / 2; ++j)
          y.at(s, ci, i, j) = 0.25 * (x.at(s, ci, 2 * i, 2 * j) + x.at(s, ci, 2 * i, 2 * j + 1) +
                                      x.at(s, ci, 2 * i + 1, 2 * j) + x.at(s, ci, 2 * i + 1, 2 * j + 1));
  return y;
}

Tensor avg_pool2_backward(const Tensor& gout, int h_in, int w_in) {
  const int n = gout.dim(0), c = gout.dim(1);
  Tensor gx({n, c, h_in, w_in});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h_in; ++i)
        for (int j = 0; j < w_in; ++j)
          gx.at(s, ci, i, j) = 0.25 * gout.at(s, ci, i / 2, j / 2);
  return gx;
}

Tensor upsample2(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) y.at(s, ci, i, j) = x.at(s, ci, i / 2, j / 2);
  return y;
}

Tensor upsample2_backward(const Tensor& gout) {
  const int n = gout.dim(0), c = gout.dim(1), h = gout.dim(2) / 2, w = gout.dim(3) / 2;
  Tensor gx({n, c, h, w});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) gx.at(s, ci, i / 2, j / 2) += gout.at(s, ci, i, j);
  return gx;
}

Tensor global_avg_pool(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) acc += x.at(s, ci, i, j);
      y.at(s, ci) = acc * inv;
    }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& gout, int h, int w) {
  const int n = gout.dim(0), c = gout.dim(1);
  Tensor gx({n, c, h, w});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci) {
      double g = gout.at(s, ci) * inv;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) gx.at(s, ci, i, j) = g;
    }
  return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w)
    throw std::invalid_argument("concat_channels: shape mismatch");
  Tensor y({n, ca + cb, h, w});
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < ca; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(s, c, i, j) = a.at(s, c, i, j);
    for (int c = 0; c < cb; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(s, ca + c, i, j) = b.at(s, c, i, j);
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_a) {
  const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
  Tensor ga({n, c_a, h, w}), gb({n, c - c_a, h, w});
  for (int s = 0; s < n; ++s) {
    for (int ci = 0; ci < c_a; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) ga.at(s, ci, i, j) = g.at(s, ci, i, j);
    for (int ci = c_a; ci < c; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) gb.at(s, ci - c_a, i, j) = g.at(s, ci, i, j);
  }
  return {ga, gb};
}

Tensor pad_replicate(const Tensor& x, int h_to, int w_to) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h_to, w_to});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h_to; ++i)
        for (int j = 0; j < w_to; ++j)
          y.at(s, ci, i, j) = x.at(s, ci, std::min(i, h - 1), std::min(j, w - 1));
  return y;
}

Tensor pad_replicate_backward(const Tensor& gout, int h_from, int w_from) {
  const int n = gout.dim(0), c = gout.dim(1), h = gout.dim(2), w = gout.dim(3);
  Tensor gx({n, c, h_from, w_from});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          gx.at(s, ci, std::min(i, h_from - 1), std::min(j, w_from - 1)) += gout.at(s, ci, i, j);
  return gx;
}

Tensor crop(const Tensor& x, int h_to, int w_to) {
  const int n = x.dim(0), c = x.dim(1);
  Tensor y({n, c, h_to, w_to});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h_to; ++i)
        for (int j = 0; j < w_to; ++j) y.at(s, ci, i, j) = x.at(s, ci, i, j);
  return y;
}

Tensor crop_backward(const Tensor& gout, int h_to, int w_to) {
  const int n = gout.dim(0), c = gout.dim(1), h = gout.dim(2), w = gout.dim(3);
  Tensor gx({n, c, h_to, w_to});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) gx.at(s, ci, i, j) = gout.at(s, ci, i, j);
  return gx;
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation blocks

CSEBlock::CSEBlock(int channels_, int reduction_)
    : channels(channels_), reduction(reduction_) {
  if (reduction_ < 1 || channels_ % reduction_ != 0)
    throw std::invalid_argument("CSEBlock: reduction must divide channel count");
  int hidden = channels_ / reduction_;
  fc1 = Linear(channels_, hidden);
  fc2 = Linear(hidden, channels_);
}

void CSEBlock::init(Rng& rng) {
  fc1.init_he(rng);
  fc2.init_he(rng);
}

void CSEBlock::register_params(ParamMap& m, const std::string& prefix) {
  fc1.register_params(m, prefix + ".fc1");
  fc2.register_params(m, prefix + ".fc2");
}

Tensor CSEBlock::forward(const Tensor& x, Ctx* ctx) const {
  if (x.dim(1) != channels) throw std::invalid_argument("CSEBlock: channel mismatch");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Ctx local;
  Ctx& c = ctx ? *ctx : local;
  c.x = x;
  c.v1 = global_avg_pool(x);
  c.a = fc1.forward(c.v1, &c.f1);
  c.r = relu(c.a);
  Tensor z = fc2.forward(c.r, &c.f2);
  c.gate = sigmoid(z);
  Tensor y({n, channels, h, w});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < channels; ++ci) {
      double g = c.gate.at(s, ci);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(s, ci, i, j) = g * x.at(s, ci, i, j);
    }
  return y;
}

Tensor CSEBlock::backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const {
  const int n = ctx.x.dim(0), h = ctx.x.dim(2), w = ctx.x.dim(3);
  Tensor gx({n, channels, h, w});
  Tensor ggate({n, channels});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < channels; ++ci) {
      double g = ctx.gate.at(s, ci);
      double acc = 0.0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          acc += gout.at(s, ci, i, j) * ctx.x.at(s, ci, i, j);
          gx.at(s, ci, i, j) = gout.at(s, ci, i, j) * g;
        }
      ggate.at(s, ci) = acc;
    }
  // through sigmoid
  Tensor gz = ggate;
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < channels; ++ci) {
      double g = ctx.gate.at(s, ci);
      gz.at(s, ci) *= g * (1.0 - g);
    }
  Tensor gr = fc2.backward(ctx.f2, gz, gb);
  Tensor ga = relu_backward(ctx.a, gr);
  Tensor gv1 = fc1.backward(ctx.f1, ga, gb);
  Tensor gpool = global_avg_pool_backward(gv1, h, w);
  for (size_t i = 0; i < gx.numel(); ++i) gx[i] += gpool[i];
  return gx;
}

SSEBlock::SSEBlock(int channels) : conv(channels, 1, 1) {}

void SSEBlock::init(Rng& rng) { conv.init_he(rng); }

void SSEBlock::register_params(ParamMap& m, const std::string& prefix) {
  conv.register_params(m, prefix + ".conv");
}

Tensor SSEBlock::forward(const Tensor& x, Ctx* ctx) const {
  Ctx local;
  Ctx& c = ctx ? *ctx : local;
  c.x = x;
  Tensor pre = conv.forward(x, &c.c);  // (n,1,h,w)
  c.gate = sigmoid(pre);
  const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, ch, h, w});
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < ch; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          y.at(s, ci, i, j) = x.at(s, ci, i, j) * c.gate.at(s, 0, i, j);
  return y;
}

Tensor SSEBlock::backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const {
  const int n = ctx.x.dim(0), ch = ctx.x.dim(1), h = ctx.x.dim(2), w = ctx.x.dim(3);
  Tensor gx({n, ch, h, w});
  Tensor ggate({n, 1, h, w});
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        double g = ctx.gate.at(s, 0, i, j);
        for (int ci = 0; ci < ch; ++ci) {
          acc += gout.at(s, ci, i, j) * ctx.x.at(s, ci, i, j);
          gx.at(s, ci, i, j) = gout.at(s, ci, i, j) * g;
        }
        ggate.at(s, 0, i, j) = acc * g * (1.0 - g);
      }
  Tensor gpre = conv.backward(ctx.c, ggate, gb);
  for (size_t i = 0; i < gx.numel(); ++i) gx[i] += gpre[i];
  return gx;
}

SCSEBlock::SCSEBlock(int channels, int reduction) : sse(channels), cse(channels, reduction) {}

void SCSEBlock::init(Rng& rng) {
  sse.init(rng);
  cse.init(rng);
}

void SCSEBlock::register_params(ParamMap& m, const std::string& prefix) {
  sse.register_params(m, prefix + ".sse");
  cse.register_params(m, prefix + ".cse");
}

Tensor SCSEBlock::forward(const Tensor& x, Ctx* ctx) const {
  Ctx local;
  Ctx& c = ctx ? *ctx : local;
  c.a = sse.forward(x, &c.s);
  c.bb = cse.forward(x, &c.c);
  Tensor y = c.a;
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::max(c.a[i], c.bb[i]);
  return y;
}

Tensor SCSEBlock::backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const {
  Tensor ga = gout, gbr = gout;
  for (size_t i = 0; i < gout.numel(); ++i) {
    if (ctx.a[i] >= ctx.bb[i])  // ties route to the spatial branch
      gbr[i] = 0.0;
    else
      ga[i] = 0.0;
  }
  Tensor gx = sse.backward(ctx.s, ga, gb);
  Tensor gx2 = cse.backward(ctx.c, gbr, gb);
  for (size_t i = 0; i < gx.numel(); ++i) gx[i] += gx2[i];
  return gx;
}

// ---------------------------------------------------------------------------
// ConvBlock / UNet

ConvBlock::ConvBlock(int cin, int cout) : c1(cin, cout, 3), c2(cout, cout, 3) {}

void ConvBlock::init(Rng& rng) {
  c1.init_he(rng);
  c2.init_he(rng);
}

void ConvBlock::register_params(ParamMap& m, const std::string& prefix) {
  c1.register_params(m, prefix + ".c1");
  c2.register_params(m, prefix + ".c2");
}

Tensor ConvBlock::forward(const Tensor& x, Ctx* ctx) const {
  Ctx local;
  Ctx& c = ctx ? *ctx : local;
  c.a1 = c1.forward(x, &c.k1);
  Tensor h1 = relu(c.a1);
  c.a2 = c2.forward(h1, &c.k2);
  return relu(c.a2);
}

Tensor ConvBlock::backward(const Ctx& ctx, const Tensor& gout, GradBuf* gb) const {
  Tensor g2 = relu_backward(ctx.a2, gout);
  Tensor gh1 = c2.backward(ctx.k2, g2, gb);
  Tensor g1 = relu_backward(ctx.a1, gh1);
  return c1.backward(ctx.k1, g1, gb);
}

int UNet::effective_reduction(int channels, int reduction) {
  int r = std::min(reduction, std::max(1, channels / 4));
  while (r > 1 && channels % r != 0) --r;
  return r;
}

UNet::UNet(int in_ch_, int out_ch_, std::array<int, 4> widths_, int reduction_, bool use_scse_)
    : in_ch(in_ch_), out_ch(out_ch_), widths(widths_), reduction(reduction_), use_scse(use_scse_) {
  enc[0] = ConvBlock(in_ch, widths[0]);
  for (int k = 1; k < 4; ++k) enc[k] = ConvBlock(widths[k - 1], widths[k]);
  bott = ConvBlock(widths[3], widths[3]);
  // dec[k] consumes up(next stage) concatenated with the skip from enc[k]
  dec[3] = ConvBlock(widths[3] + widths[3], widths[3]);
  dec[2] = ConvBlock(widths[3] + widths[2], widths[2]);
  dec[1] = ConvBlock(widths[2] + widths[1], widths[1]);
  dec[0] = ConvBlock(widths[1] + widths[0], widths[0]);
  if (use_scse) {
    for (int k = 0; k < 4; ++k) {
      enc_cse[k] = CSEBlock(widths[k], effective_reduction(widths[k], reduction));
      dec_scse[k] = SCSEBlock(dec[k].c2.cout, effective_reduction(dec[k].c2.cout, reduction));
    }
  }
  out_conv = Conv2d(widths[0], out_ch, 1);
}

void UNet::init(Rng& rng) {
  for (int k = 0; k < 4; ++k) enc[k].init(rng);
  bott.init(rng);
  for (int k = 0; k < 4; ++k) dec[k].init(rng);
  if (use_scse)
    for (int k = 0; k < 4; ++k) {
      enc_cse[k].init(rng);
      dec_scse[k].init(rng);
    }
  out_conv.init_zero();  // a fresh network contributes nothing
}

void UNet::register_params(ParamMap& m, const std::string& prefix) {
  for (int k = 0; k < 4; ++k) {
    enc[k].register_params(m, prefix + ".enc" + std::to_string(k));
    if (use_scse) enc_cse[k].register_params(m, prefix + ".enc_cse" + std::to_string(k));
  }
  bott.register_params(m, prefix + ".bott");
  for (int k = 0; k < 4; ++k) {
    dec[k].register_params(m, prefix + ".dec" + std::to_string(k));
    if (use_scse) dec_scse[k].register_params(m, prefix + ".dec_scse" + std::to_string(k));
  }
  out_conv.register_params(m, prefix + ".out");
}

Tensor UNet::forward(const Tensor& x, Ctx* ctx) const {
  if (x.dim(2) % 16 || x.dim(3) % 16)
    throw std::invalid_argument("UNet: spatial size must be a multiple of 16");
  Ctx local;
  Ctx& c = ctx ? *ctx : local;
  c.h = x.dim(2);
  c.w = x.dim(3);

  Tensor cur = x;
  for (int k = 0; k < 4; ++k) {
    Tensor body = enc[k].forward(cur, &c.enc_cb[k]);
    c.e[k] = use_scse ? enc_cse[k].forward(body, &c.enc_gate[k]) : body;
    cur = avg_pool2(c.e[k]);
  }
  cur = bott.forward(cur, &c.bott_cb);
  for (int k = 3; k >= 0; --k) {
    Tensor up = upsample2(cur);
    Tensor cat = concat_channels(up, c.e[k]);
    Tensor body = dec[k].forward(cat, &c.dec_cb[k]);
    cur = use_scse ? dec_scse[k].forward(body, &c.dec_gate[k]) : body;
  }
  return out_conv.forward(cur, &c.out_c);
}

Tensor UNet::backward(const Ctx& c, const Tensor& gout, GradBuf* gb) const {
  Tensor g = out_conv.backward(c.out_c, gout, gb);
  Tensor skip_g[4];
  for (int k = 0; k <= 3; ++k) {
    if (use_scse) g = dec_scse[k].backward(c.dec_gate[k], g, gb);
    Tensor gcat = dec[k].backward(c.dec_cb[k], g, gb);
    int up_ch = (k == 3) ? widths[3] : widths[k + 1];
    auto [gup, gskip] = split_channels(gcat, up_ch);
    skip_g[k] = std::move(gskip);
    g = upsample2_backward(gup);
  }
  g = bott.backward(c.bott_cb, g, gb);
  for (int k = 3; k >= 0; --k) {
    Tensor ge = avg_pool2_backward(g, c.e[k].dim(2), c.e[k].dim(3));
    for (size_t i = 0; i < ge.numel(); ++i) ge[i] += skip_g[k][i];
    if (use_scse) ge = enc_cse[k].backward(c.enc_gate[k], ge, gb);
    g = enc[k].backward(c.enc_cb[k], ge, gb);
  }
  return g;
}

// ---------------------------------------------------------------------------

double softmax_xent(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("softmax_xent: label count mismatch");
  if (dlogits) *dlogits = Tensor({n, c});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || y >= c) throw std::invalid_argument("softmax_xent: label out of range");
    double mx = logits.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - mx);
    loss += std::log(z) - (logits.at(i, y) - mx);
    if (dlogits) {
      for (int j = 0; j < c; ++j)
        dlogits->at(i, j) = std::exp(logits.at(i, j) - mx) / z / n;
      dlogits->at(i, y) -= 1.0 / n;
    }
  }
  return loss / n;
}

Tensor softmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor p({n, c});
  for (int i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - mx);
    for (int j = 0; j < c; ++j) p.at(i, j) = std::exp(logits.at(i, j) - mx) / z;
  }
  return p;
}

}  // namespace robustae::nn
