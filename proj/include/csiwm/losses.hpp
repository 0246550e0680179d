#pragma once

#include "csiwm/params.hpp"

namespace csiwm {

struct LossWeights {
  double tf = 1.0;
  double roll = 2.0;
  double var = 2.0;
  double cov = 10.0;
  double idm = 1.0;
  double gamma = 1.0;    // target per-dimension std
  double epsilon = 1e-4; // inside the variance square root

  void validate() const;
};

/// Which components enter the optimized total.
struct LossToggles {
  bool tf = true;
  bool roll = true;
  bool var = true;
  bool cov = true;
  bool idm = true;
};

/// Latents of one training step.
struct RolloutBatch {
  ad::Var z_hat;    // (H, K, D) predictions
  ad::Var z_bar;    // (H, K, D) targets
  ad::Var actions;  // (H, K, 2)
  ad::Var z0;       // (K, D) online embedding of the first step
  ad::Var z_bar0;   // (K, D) target embedding of the first step; only for the target-side regularizers
};

struct LossBreakdown {
  double tf = 0, roll = 0, var = 0, cov = 0, idm = 0, total = 0;
};

struct LossTerms {
  ad::Var tf, roll, var, cov, idm;
  ad::Var total;  // weighted sum of the enabled components
  LossBreakdown values;
};

ad::Var loss_tf(const ad::Var& z_hat, const ad::Var& z_bar);
ad::Var loss_roll(const ad::Var& z_hat, const ad::Var& z_bar);
/// Z: (T, K, D), per-slice hinge on the unbiased batch std.
ad::Var loss_var(const ad::Var& z, double gamma, double epsilon);
/// Z: (T, K, D), squared off-diagonal covariance per slice.
ad::Var loss_cov(const ad::Var& z);
/// Z: (T+1, K, D) latents, A: (T, K, 2) actions of each transition's source step.
ad::Var loss_idm(const BoundParams& psi, const ad::Var& z, const ad::Var& actions);

/// Regularizers act on [z0, Z_hat] unless `on_targets`, which uses
/// [z_bar0, Z_bar] and leaves them without gradient.
LossTerms loss_total(const RolloutBatch& batch, const LossWeights& weights, const LossToggles& toggles,
                     const BoundParams& psi, bool on_targets = false);

}  // namespace csiwm
