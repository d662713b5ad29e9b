#include "robustae/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace robustae::attack {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_precondition(const Tensor& x, int y, const target::TargetModel& model) {
  if (x.ndim() != 4 || x.dim(0) != 1)
    throw std::invalid_argument("attack: expected a single 1 x C x H x W image");
  if (y < 0 || y >= model.num_classes())
    throw std::invalid_argument("attack: label out of range");
  if (model.classify_one(x) != y)
    throw PreconditionError("attack: target does not classify the input as its label");
}

// d(margin)/dZ for a single logits row; zero when the -k floor is active.
Tensor margin_grad(const Tensor& z, int y, double k) {
  const int c = z.dim(1);
  Tensor g({1, c});
  int runner = -1;
  for (int j = 0; j < c; ++j) {
    if (j == y) continue;
    if (runner < 0 || z.at(0, j) > z.at(0, runner)) runner = j;
  }
  double gap = z.at(0, y) - z.at(0, runner);
  if (gap > -k) {
    g.at(0, y) = 1.0;
    g.at(0, runner) = -1.0;
  }
  return g;
}

// CE(Z, y) for a single row plus d/dZ.
double xent_row(const Tensor& z, int y, Tensor* dz) {
  const int c = z.dim(1);
  double mx = z.at(0, 0);
  for (int j = 1; j < c; ++j) mx = std::max(mx, z.at(0, j));
  double sum = 0.0;
  for (int j = 0; j < c; ++j) sum += std::exp(z.at(0, j) - mx);
  double loss = std::log(sum) - (z.at(0, y) - mx);
  if (dz) {
    *dz = Tensor({1, c});
    for (int j = 0; j < c; ++j) dz->at(0, j) = std::exp(z.at(0, j) - mx) / sum;
    dz->at(0, y) -= 1.0;
  }
  return loss;
}

bool attack_success(const Tensor& candidate, int y, const target::TargetModel& model,
                    const sio::SIOModel* surrogate, AttackConfig::SuccessOn mode) {
  if (mode == AttackConfig::SuccessOn::transmitted) {
    if (!surrogate)
      throw std::invalid_argument("attack: success_on=transmitted needs a surrogate");
    return model.classify_one(sio::sio_forward(*surrogate, candidate)) != y;
  }
  return model.classify_one(candidate) != y;
}

AEResult finish(const Tensor& x, Tensor adv, int y, const target::TargetModel& model,
                int iters) {
  AEResult r;
  r.success_clean = model.classify_one(adv) != y;
  Tensor delta = adv - x;
  r.l2 = l2_norm(delta);
  r.linf = linf_norm(delta);
  r.adversarial = std::move(adv);
  r.iterations_used = iters;
  return r;
}

}  // namespace

Method method_from_string(const std::string& s) {
  if (s == "fgsm") return Method::fgsm;
  if (s == "pgd") return Method::pgd;
  if (s == "mifgsm") return Method::mifgsm;
  if (s == "cw") return Method::cw;
  throw std::invalid_argument("unknown attack method: " + s);
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::fgsm: return "fgsm";
    case Method::pgd: return "pgd";
    case Method::mifgsm: return "mifgsm";
    case Method::cw: return "cw";
  }
  return "?";
}

void AttackConfig::validate() const {
  if (lambda <= 0.0 || lambda > 1.0)
    throw std::invalid_argument("AttackConfig: lambda must be in (0,1]");
  if (iters < 1) throw std::invalid_argument("AttackConfig: T must be >= 1");
  if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
}

AttackConfig training_defaults(Method m) {
  AttackConfig c;
  switch (m) {
    case Method::fgsm:
      c.epsilon = 3.0 / 255;
      c.iters = 1;
      break;
    case Method::pgd:
      c.epsilon = 3.0 / 255;
      c.alpha = 2.0 / 255;
      c.iters = 40;
      break;
    case Method::mifgsm:
      c.epsilon = 3.0 / 255;
      c.iters = 5;
      c.mu = 1.0;
      break;
    case Method::cw:
      c.c_fidelity = 1.0;
      c.margin_k = 0.0;
      c.iters = 40;
      break;
  }
  return c;
}

double margin_f(const Tensor& logits_row, int y, double k) {
  Tensor z = logits_row;
  if (z.ndim() == 1) z.reshape({1, z.dim(0)});
  const int c = z.dim(1);
  if (z.dim(0) != 1) throw std::invalid_argument("margin_f: expected one logits row");
  if (c < 2) throw std::invalid_argument("margin_f: need at least 2 classes");
  if (y < 0 || y >= c) throw std::invalid_argument("margin_f: label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < c; ++j)
    if (j != y) best_other = std::max(best_other, z.at(0, j));
  return std::max(z.at(0, y) - best_other, -k);
}

Tensor tanh_reparam(const Tensor& w) {
  Tensor x = w;
  for (size_t i = 0; i < x.numel(); ++i) x[i] = (1.0 + std::tanh(x[i])) / 2.0;
  return x;
}

Tensor inverse_reparam(const Tensor& x, double eps_c) {
  Tensor w = x;
  for (size_t i = 0; i < w.numel(); ++i) {
    double v = std::clamp(w[i], eps_c, 1.0 - eps_c);
    w[i] = 0.5 * std::log(v / (1.0 - v));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Joint losses

double joint_ce_with_grad(const Tensor& x, int y, const target::TargetModel& model,
                          const sio::SIOModel* surrogate, double lambda, Tensor* gx) {
  const bool robust = surrogate && lambda < 1.0;
  if (!robust) lambda = 1.0;  // no surrogate branch: plain vanilla CE
  double loss = 0.0;
  if (gx) *gx = Tensor(x.shape());

  if (gx) {
    auto lv = model.logits_vjp(x);
    Tensor dz;
    loss += lambda * xent_row(lv.z, y, &dz);
    Tensor g1 = lv.vjp(dz);
    axpy(lambda, g1, *gx);
  } else {
    loss += lambda * xent_row(model.logits(x), y, nullptr);
  }

  if (robust) {
    sio::SioCtx sctx;
    Tensor gx_hat = gx ? sio::sio_forward(*surrogate, x, &sctx)
                       : sio::sio_forward(*surrogate, x);
    if (gx) {
      auto lv2 = model.logits_vjp(gx_hat);
      Tensor dz2;
      loss += (1.0 - lambda) * xent_row(lv2.z, y, &dz2);
      Tensor gimg = lv2.vjp(dz2);
      Tensor g2 = sio::sio_backward(*surrogate, sctx, gimg);
      axpy(1.0 - lambda, g2, *gx);
    } else {
      loss += (1.0 - lambda) * xent_row(model.logits(gx_hat), y, nullptr);
    }
  }
  return loss;
}

double joint_ce(const Tensor& x, int y, const target::TargetModel& model,
                const sio::SIOModel* surrogate, double lambda) {
  if (lambda <= 0.0 || lambda > 1.0)
    throw std::invalid_argument("joint_ce: lambda must be in (0,1]");
  return joint_ce_with_grad(x, y, model, surrogate, lambda, nullptr);
}

double lagrange_loss_with_grad(const Tensor& w_t, const Tensor& w, int y,
                               const target::TargetModel& model,
                               const sio::SIOModel* surrogate, const AttackConfig& cfg,
                               Tensor* gw) {
  const bool robust = surrogate && cfg.lambda < 1.0;
  const double lambda = robust ? cfg.lambda : 1.0;  // vanilla objective otherwise
  if (gw) *gw = Tensor(w_t.shape());

  Tensor x_t = tanh_reparam(w_t);
  Tensor x0 = tanh_reparam(w);

  // fidelity: c * ||x_t - x0||_2, with a zero subgradient at coincidence
  Tensor diff = x_t - x0;
  double dist = l2_norm(diff);
  double loss = cfg.c_fidelity * dist;
  Tensor gx(x_t.shape());
  if (gw && dist > 1e-12) axpy(cfg.c_fidelity / dist, diff, gx);

  // margin on the bare model
  if (gw) {
    auto lv = model.logits_vjp(x_t);
    loss += lambda * margin_f(lv.z, y, cfg.margin_k);
    Tensor dz = margin_grad(lv.z, y, cfg.margin_k);
    Tensor g1 = lv.vjp(dz);
    axpy(lambda, g1, gx);
  } else {
    loss += lambda * margin_f(model.logits(x_t), y, cfg.margin_k);
  }

  // margin through the surrogate
  if (robust) {
    sio::SioCtx sctx;
    Tensor xhat = gw ? sio::sio_forward(*surrogate, x_t, &sctx)
                     : sio::sio_forward(*surrogate, x_t);
    if (gw) {
      auto lv2 = model.logits_vjp(xhat);
      loss += (1.0 - lambda) * margin_f(lv2.z, y, cfg.margin_k);
      Tensor dz2 = margin_grad(lv2.z, y, cfg.margin_k);
      Tensor gimg = lv2.vjp(dz2);
      Tensor g2 = sio::sio_backward(*surrogate, sctx, gimg);
      axpy(1.0 - lambda, g2, gx);
    } else {
      loss += (1.0 - lambda) * margin_f(model.logits(xhat), y, cfg.margin_k);
    }
  }

  if (gw) {
    // chain through h: h'(w) = (1 - tanh^2(w)) / 2 = 2 h (1 - h)
    for (size_t i = 0; i < gw->numel(); ++i)
      (*gw)[i] = gx[i] * 2.0 * x_t[i] * (1.0 - x_t[i]);
  }
  return loss;
}

double lagrange_loss(const Tensor& w_t, const Tensor& w, int y,
                     const target::TargetModel& model, const sio::SIOModel* surrogate,
                     const AttackConfig& cfg) {
  return lagrange_loss_with_grad(w_t, w, y, model, surrogate, cfg, nullptr);
}

// ---------------------------------------------------------------------------
// Gradient-projection attacks

AEResult rfgsm(const Tensor& x, int y, const target::TargetModel& model,
               const sio::SIOModel* surrogate, const AttackConfig& cfg) {
  cfg.validate();
  check_precondition(x, y, model);
  Tensor g;
  joint_ce_with_grad(x, y, model, surrogate, cfg.lambda, &g);
  Tensor adv = x;
  for (size_t i = 0; i < adv.numel(); ++i)
    adv[i] = std::clamp(adv[i] + std::abs(cfg.epsilon) * sign(g[i]), 0.0, 1.0);
  return finish(x, std::move(adv), y, model, 1);
}

AEResult rpgd(const Tensor& x, int y, const target::TargetModel& model,
              const sio::SIOModel* surrogate, const AttackConfig& cfg) {
  cfg.validate();
  check_precondition(x, y, model);
  const double eps = std::abs(cfg.epsilon), alpha = std::abs(cfg.alpha);
  Tensor cur = x;
  for (int t = 0; t < cfg.iters; ++t) {
    Tensor g;
    joint_ce_with_grad(cur, y, model, surrogate, cfg.lambda, &g);
    for (size_t i = 0; i < cur.numel(); ++i) {
      double v = cur[i] + alpha * sign(g[i]);
      v = std::clamp(v, x[i] - eps, x[i] + eps);  // project onto the eps-ball
      cur[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return finish(x, std::move(cur), y, model, cfg.iters);
}

AEResult rmifgsm(const Tensor& x, int y, const target::TargetModel& model,
                 const sio::SIOModel* surrogate, const AttackConfig& cfg) {
  cfg.validate();
  check_precondition(x, y, model);
  const double eps = std::abs(cfg.epsilon);
  const double alpha = eps / cfg.iters;
  Tensor cur = x;
  Tensor momentum(x.shape());
  for (int t = 1; t <= cfg.iters; ++t) {
    Tensor g;
    double loss = joint_ce_with_grad(cur, y, model, surrogate, cfg.lambda, &g);
    double denom;
    if (cfg.momentum_norm == AttackConfig::MomentumNorm::grad) {
      denom = 0.0;
      for (size_t i = 0; i < g.numel(); ++i) denom += std::abs(g[i]);
    } else {
      denom = std::abs(loss);
    }
    denom = std::max(denom, 1e-12);
    for (size_t i = 0; i < momentum.numel(); ++i)
      momentum[i] = cfg.mu * momentum[i] + g[i] / denom;
    Tensor prev = cur;
    for (size_t i = 0; i < cur.numel(); ++i) {
      double stepped = prev[i] + alpha * sign(momentum[i]);
      double delta = std::clamp(stepped - x[i], -eps, eps);
      double base = cfg.mifgsm_literal_rebase ? prev[i] : x[i];
      cur[i] = std::clamp(base + delta, 0.0, 1.0);
    }
  }
  return finish(x, std::move(cur), y, model, cfg.iters);
}

// ---------------------------------------------------------------------------
// Lagrange-form attack

AEResult rcw_attack(const Tensor& x, int y, const target::TargetModel& model,
                    const sio::SIOModel* surrogate, const AttackConfig& cfg) {
  cfg.validate();
  check_precondition(x, y, model);

  Tensor w0 = inverse_reparam(x);
  Tensor w = w0;
  nn::ParamMap params{{"w", &w}};
  nn::Adam opt;
  opt.lr = cfg.cw_lr;

  const int check_every = std::max(cfg.iters / 10, 1);
  double best_l2 = std::exp(10.0);
  double last_check_loss = std::numeric_limits<double>::infinity();
  Tensor best;
  bool found = false;
  Tensor candidate = tanh_reparam(w);
  int iters_used = 0;

  for (int t = 0; t < cfg.iters; ++t) {
    Tensor gw;
    double loss = lagrange_loss_with_grad(w, w0, y, model, surrogate, cfg, &gw);
    nn::GradBuf gb;
    gb.of(w) = gw;
    opt.step(params, gb);
    candidate = tanh_reparam(w);
    iters_used = t + 1;

    double cand_l2 = l2_norm(candidate - x);
    if (cand_l2 < best_l2 &&
        attack_success(candidate, y, model, surrogate, cfg.success_on)) {
      best_l2 = cand_l2;
      best = candidate;
      found = true;
    }
    if (t > 0 && t % check_every == 0) {
      if (loss > last_check_loss) break;  // early stop: the loss stopped converging
      last_check_loss = loss;
    }
  }
  return finish(x, found ? std::move(best) : std::move(candidate), y, model, iters_used);
}

AEResult run_attack(Method m, const Tensor& x, int y, const target::TargetModel& model,
                    const sio::SIOModel* surrogate, const AttackConfig& cfg) {
  switch (m) {
    case Method::fgsm: return rfgsm(x, y, model, surrogate, cfg);
    case Method::pgd: return rpgd(x, y, model, surrogate, cfg);
    case Method::mifgsm: return rmifgsm(x, y, model, surrogate, cfg);
    case Method::cw: return rcw_attack(x, y, model, surrogate, cfg);
  }
  throw std::logic_error("run_attack: unreachable");
}

}  // namespace robustae::attack
