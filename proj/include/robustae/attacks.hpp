#pragma once

#include <memory>
#include <optional>
#include <string>

#include "robustae/sio.hpp"
#include "robustae/target.hpp"

namespace robustae::attack {

struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Method { fgsm, pgd, mifgsm, cw };

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);

/// Per-attack hyperparameters. Budgets are on the [0,1] pixel scale; the CLI
/// accepts 0..255-scale values and normalizes.
struct AttackConfig {
  double epsilon = 3.0 / 255;
  double alpha = 2.0 / 255;
  int iters = 40;  // T
  double mu = 1.0;
  double lambda = 1.0;  // (0,1]; 1 degenerates to the vanilla attack
  double c_fidelity = 1.0;
  double margin_k = 0.0;
  double cw_lr = 0.01;
  uint64_t seed = 0;

  enum class SuccessOn { clean, transmitted };
  SuccessOn success_on = SuccessOn::clean;
  enum class MomentumNorm { grad, loss };
  MomentumNorm momentum_norm = MomentumNorm::grad;
  bool mifgsm_literal_rebase = false;

  void validate() const;
};

/// Standard parameter settings used when generating surrogate-training AEs.
AttackConfig training_defaults(Method m);

struct AEResult {
  Tensor adversarial;
  bool success_clean = false;  // F(x*) != y
  double l2 = 0.0;
  double linf = 0.0;
  int iterations_used = 0;
};

/// Margin function: max(Z[y] - max_{i != y} Z[i], -k). The input is
/// adversarial exactly when this is <= 0.
double margin_f(const Tensor& logits_row, int y, double k);

/// Box-eliminating change of variables: h(w) = (1 + tanh(w)) / 2 and its
/// inverse w = 0.5 ln(x / (1-x)); the inverse clamps x away from {0,1} first.
Tensor tanh_reparam(const Tensor& w);
Tensor inverse_reparam(const Tensor& x, double eps_c = 1e-6);

/// Joint cross-entropy: lambda * CE(Z(x), y) + (1-lambda) * CE(Z(G(x)), y).
/// The surrogate branch is skipped entirely when lambda == 1 or sio is null.
double joint_ce(const Tensor& x, int y, const target::TargetModel& model,
                const sio::SIOModel* surrogate, double lambda);
double joint_ce_with_grad(const Tensor& x, int y, const target::TargetModel& model,
                          const sio::SIOModel* surrogate, double lambda, Tensor* gx);

/// Lagrange objective: c * ||h(w_t) - h(w)||_2 + lambda * f(h(w_t)) +
/// (1-lambda) * f(G(h(w_t))), margins with confidence k.
double lagrange_loss(const Tensor& w_t, const Tensor& w, int y,
                     const target::TargetModel& model, const sio::SIOModel* surrogate,
                     const AttackConfig& cfg);
double lagrange_loss_with_grad(const Tensor& w_t, const Tensor& w, int y,
                               const target::TargetModel& model,
                               const sio::SIOModel* surrogate, const AttackConfig& cfg,
                               Tensor* gw);

// The attacks. Every entry point checks that the target classifies x as y and
// throws PreconditionError otherwise. Passing a null surrogate (or lambda=1)
// yields the vanilla attack.
AEResult rfgsm(const Tensor& x, int y, const target::TargetModel& model,
               const sio::SIOModel* surrogate, const AttackConfig& cfg);
AEResult rpgd(const Tensor& x, int y, const target::TargetModel& model,
              const sio::SIOModel* surrogate, const AttackConfig& cfg);
AEResult rmifgsm(const Tensor& x, int y, const target::TargetModel& model,
                 const sio::SIOModel* surrogate, const AttackConfig& cfg);
AEResult rcw_attack(const Tensor& x, int y, const target::TargetModel& model,
                    const sio::SIOModel* surrogate, const AttackConfig& cfg);

AEResult run_attack(Method m, const Tensor& x, int y, const target::TargetModel& model,
                    const sio::SIOModel* surrogate, const AttackConfig& cfg);

}  // namespace robustae::attack
