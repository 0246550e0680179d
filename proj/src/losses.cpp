#include "csiwm/losses.hpp"

#include "csiwm/model.hpp"

#include <cmath>
#include <stdexcept>

namespace csiwm {
namespace {

using ad::Var;

void check_same(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape() || a.value().rank() != 3) {
    throw std::invalid_argument(std::string(what) + ": expected equal (H, K, D) shapes, got " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
}

void check_batch(const Var& z, const char* what) {
  if (z.value().rank() != 3) throw std::invalid_argument(std::string(what) + ": expected (T, K, D)");
  if (z.dim(1) < 2) throw std::invalid_argument(std::string(what) + ": needs a batch of at least 2");
}

/// Z minus its mean over the batch axis.
Var center_batch(const Var& z) {
  const Index k = z.dim(1);
  const Var mean = ad::scale(ad::sum_axis(z, 1), 1.0 / double(k));
  return ad::sub(z, ad::broadcast_axis(mean, 1, k));
}

Var leading_row(const Var& v) { return ad::reshape(v, {1, v.dim(0), v.dim(1)}); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {tf, roll, var, cov, idm}) {
    if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and non-negative");
  }
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be positive");
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be positive");
}

Var loss_tf(const Var& z_hat, const Var& z_bar) {
  check_same(z_hat, z_bar, "loss_tf");
  const double pairs = double(z_hat.dim(0) * z_hat.dim(1));
  return ad::scale(ad::sum(ad::abs(ad::sub(z_hat, z_bar))), 1.0 / pairs);
}

Var loss_roll(const Var& z_hat, const Var& z_bar) {
  check_same(z_hat, z_bar, "loss_roll");
  const Index h = z_hat.dim(0);
  const Var diff = ad::sub(ad::slice(z_hat, h - 1, h), ad::slice(z_bar, h - 1, h));
  return ad::scale(ad::sum(ad::abs(diff)), 1.0 / double(z_hat.dim(1)));
}

Var loss_var(const Var& z, double gamma, double epsilon) {
  check_batch(z, "loss_var");
  const Index t = z.dim(0), k = z.dim(1), d = z.dim(2);
  const Var var = ad::scale(ad::sum_axis(ad::square(center_batch(z)), 1), 1.0 / double(k - 1));
  const Var std = ad::sqrt(ad::add_scalar(var, epsilon));
  const Var hinge = ad::relu(ad::add_scalar(ad::scale(std, -1.0), gamma));
  return ad::scale(ad::sum(hinge), 1.0 / double(t * d));
}

Var loss_cov(const Var& z) {
  check_batch(z, "loss_cov");
  const Index t = z.dim(0), k = z.dim(1), d = z.dim(2);
  const Var centered = center_batch(z);
  const Var cov = ad::scale(ad::batched_matmul(ad::batched_transpose(centered), centered), 1.0 / double(k - 1));
  Tensor mask = Tensor::constant({t, d, d}, 1.0);
  for (Index s = 0; s < t; ++s) {
    for (Index i = 0; i < d; ++i) mask[(s * d + i) * d + i] = 0.0;
  }
  return ad::scale(ad::sum(ad::mul(ad::square(cov), ad::constant(std::move(mask)))), 1.0 / double(t * d));
}

Var loss_idm(const BoundParams& psi, const Var& z, const Var& actions) {
  if (z.value().rank() != 3 || actions.value().rank() != 3 || z.dim(0) != actions.dim(0) + 1 ||
      z.dim(1) != actions.dim(1) || actions.dim(2) != kActionDim || actions.dim(0) < 1) {
    throw std::invalid_argument("loss_idm: latents " + shape_string(z.shape()) + " do not match actions " +
                                shape_string(actions.shape()));
  }
  const Index t = actions.dim(0), k = actions.dim(1);
  const Var decoded = idm_forward(psi, ad::slice(z, 0, t), ad::slice(z, 1, t + 1));
  return ad::scale(ad::sum(ad::square(ad::sub(actions, decoded))), 1.0 / double(t * k));
}

LossTerms loss_total(const RolloutBatch& batch, const LossWeights& weights, const LossToggles& toggles,
                     const BoundParams& psi, bool on_targets) {
  weights.validate();
  LossTerms out;
  out.tf = loss_tf(batch.z_hat, batch.z_bar);
  out.roll = loss_roll(batch.z_hat, batch.z_bar);
  Var seq;
  if (on_targets) {
    if (!batch.z_bar0) throw std::invalid_argument("target-side regularizers need the first target embedding");
    seq = ad::concat({leading_row(batch.z_bar0), batch.z_bar}, 0);
  } else {
    seq = ad::concat({leading_row(batch.z0), batch.z_hat}, 0);
  }
  out.var = loss_var(seq, weights.gamma, weights.epsilon);
  out.cov = loss_cov(seq);
  out.idm = loss_idm(psi, seq, batch.actions);

  const std::pair<const Var*, double> parts[] = {
      {&out.tf, toggles.tf ? weights.tf : 0.0},    {&out.roll, toggles.roll ? weights.roll : 0.0},
      {&out.var, toggles.var ? weights.var : 0.0}, {&out.cov, toggles.cov ? weights.cov : 0.0},
      {&out.idm, toggles.idm ? weights.idm : 0.0},
  };
  for (const auto& [term, lambda] : parts) {
    if (lambda == 0.0) continue;
    const Var weighted = ad::scale(*term, lambda);
    out.total = out.total ? ad::add(out.total, weighted) : weighted;
  }
  if (!out.total) out.total = ad::constant(Tensor::scalar(0.0));

  auto& v = out.values;
  v.tf = out.tf.item();
  v.roll = out.roll.item();
  v.var = out.var.item();
  v.cov = out.cov.item();
  v.idm = out.idm.item();
  v.total = out.total.item();
  return out;
}

}  // namespace csiwm
