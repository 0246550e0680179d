#include "csiwm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace csiwm {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

constexpr std::uint64_t kSampleStream = 0x5e6d;
constexpr std::uint64_t kMaskStream = 0x3a5c;

void check_step(std::int64_t step, std::int64_t total) {
  if (total < 1 || step < 0 || step > total) {
    throw std::out_of_range("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
}

double global_norm(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double s = 0;
  for (const auto* list : {&a, &b}) {
    for (const auto& g : *list) s += g.data().squaredNorm();
  }
  return std::sqrt(s);
}

/// Copies one snapshot into slot `index` of an NHWC batch.
void put_nhwc(Tensor& batch, Index index, const ModelInput& in) {
  const Index plane = in.rows() * in.taps();
  double* dst = batch.ptr() + index * plane * 2;
  const double* src = in.x.ptr();
  for (Index i = 0; i < plane; ++i) {
    dst[2 * i] = src[i];
    dst[2 * i + 1] = src[plane + i];
  }
}

void round_params(ParamSet& p) {
  for (auto& e : p.entries()) e.value.data() = e.value.data().cast<float>().cast<double>();
}

void round_adam(AdamState& s) {
  for (auto* list : {&s.m, &s.v}) {
    for (auto& t : *list) t.data() = t.data().cast<float>().cast<double>();
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (steps_per_epoch < 0) throw std::invalid_argument("steps_per_epoch must be non-negative");
  if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw std::invalid_argument("warmup_fraction must be in (0, 1)");
  for (double v : {lr_start, lr_peak, lr_end, wd_start, wd_end}) {
    if (!(v >= 0) || !std::isfinite(v)) throw std::invalid_argument("learning rates and weight decay must be >= 0");
  }
  if (!(ema_decay >= 0 && ema_decay <= 1)) throw std::invalid_argument("ema_decay must be in [0, 1]");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0)) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
  if (!std::isfinite(grad_clip)) throw std::invalid_argument("grad_clip must be finite");
  weights.validate();
}

AdamState AdamState::zeros_like(const ParamSet& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

Index TrainingSet::snapshot_count() const {
  Index n = 0;
  for (const auto& t : inputs) n += Index(t.size());
  return n;
}

TrainingSet prepare_training_set(std::span<const TrajectoryRecord> data, const PreprocConfig& preproc) {
  TrainingSet set;
  for (const auto& traj : data) {
    std::vector<ModelInput> inputs;
    inputs.reserve(traj.snapshots.size());
    for (const auto& s : traj.snapshots) inputs.push_back(preprocess(s.csi, preproc));
    set.inputs.push_back(std::move(inputs));
    set.actions.push_back(traj.actions);
  }
  return set;
}

std::vector<Segment> sample_rollout_segments(std::span<const std::size_t> lengths, int horizon, int batch_size,
                                             std::uint64_t seed) {
  if (horizon < 1 || batch_size < 1) throw std::invalid_argument("horizon and batch size must be positive");
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (std::size_t len : lengths) {
    total += len > std::size_t(horizon) ? len - std::size_t(horizon) : 0;
    cumulative.push_back(total);
  }
  if (total == 0) {
    throw std::invalid_argument("no trajectory has the " + std::to_string(horizon + 1) + " snapshots a segment needs");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<Segment> out;
  out.reserve(std::size_t(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const std::size_t u = pick(rng);
    const std::size_t traj = std::size_t(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    const std::size_t before = traj == 0 ? 0 : cumulative[traj - 1];
    out.push_back({traj, u - before});
  }
  return out;
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  check_step(step, total_steps);
  const std::int64_t warmup = std::int64_t(std::ceil(cfg.warmup_fraction * double(total_steps)));
  if (step < warmup) {
    const double f = double(step) / double(warmup);
    return (1 - f) * cfg.lr_start + f * cfg.lr_peak;
  }
  const double span = double(total_steps - warmup);
  const double progress = span > 0 ? double(step - warmup) / span : 1.0;
  const double c = 0.5 * (1 + std::cos(std::numbers::pi * progress));
  return c * cfg.lr_peak + (1 - c) * cfg.lr_end;
}

double wd_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  check_step(step, total_steps);
  const double f = double(step) / double(total_steps);
  return (1 - f) * cfg.wd_start + f * cfg.wd_end;
}

void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr, double wd,
                const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.entries()[i].value.shape()) {
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " + params.entries()[i].name);
    }
    if (!grads[i].all_finite()) {
      throw NumericalError("non-finite gradient for parameter " + params.entries()[i].name);
    }
  }
  ++state.step;
  const double c1 = 1 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& e = params.entries()[i];
    auto& theta = e.value.data();
    const auto& g = grads[i].data();
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseAbs2();
    if (e.decay) theta *= 1 - lr * wd;
    theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  }
}

void round_to_storage(TrainerState& state) {
  auto& m = state.model;
  for (auto* p : {&m.online, &m.online_stats, &m.target, &m.target_stats, &m.predictor, &m.idm}) round_params(*p);
  round_adam(state.adam_encoder);
  round_adam(state.adam_predictor);
}

int steps_per_epoch(const TrainConfig& cfg, const TrainingSet& data) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const double per_step = double(cfg.batch_size) * double(cfg.horizon + 1);
  return std::max(1, int(std::ceil(double(data.snapshot_count()) / per_step)));
}

TrainerState init_trainer(const ModelConfig& model, const TrainConfig& cfg, const TrainingSet& data) {
  cfg.validate();
  if (data.inputs.empty() || data.inputs[0].empty()) throw std::invalid_argument("training set is empty");
  ModelConfig mc = model;
  mc.input_rows = data.inputs[0][0].rows();
  mc.input_taps = data.inputs[0][0].taps();
  TrainerState s;
  s.model = init_model(mc, cfg.seed);
  s.adam_encoder = AdamState::zeros_like(s.model.online);
  s.adam_predictor = AdamState::zeros_like(s.model.predictor);
  round_to_storage(s);
  return s;
}

StepBatch make_step_batch(const ModelConfig& model, const TrainConfig& cfg, const TrainingSet& data,
                          const PreprocConfig& preproc, std::span<const Segment> segments, std::uint64_t mask_seed) {
  const Index k = Index(segments.size()), h = cfg.horizon;
  const Index rows = model.input_rows, taps = model.input_taps;
  const Index first = cfg.regularize_targets ? 0 : 1;
  StepBatch out;
  out.online = Tensor({k, rows, taps, 2});
  out.target = Tensor({(h + 1 - first) * k, rows, taps, 2});
  out.actions = Tensor({h, k, kActionDim});
  for (Index b = 0; b < k; ++b) {
    const Segment& seg = segments[std::size_t(b)];
    const auto& traj = data.inputs.at(seg.trajectory);
    if (seg.start + std::size_t(h) >= traj.size()) throw std::invalid_argument("segment runs past its trajectory");
    ModelInput online = traj[seg.start];
    if (online.rows() != rows || online.taps() != taps) throw std::invalid_argument("snapshot shape differs from model");
    const Index plane = rows * taps;
    for (Index cell : tube_mask_cells(rows, taps, preproc.mask_ratio, mix(mask_seed, std::uint64_t(b)))) {
      online.x[cell] = 0.0;
      online.x[plane + cell] = 0.0;
    }
    put_nhwc(out.online, b, online);
    for (Index t = first; t <= h; ++t) put_nhwc(out.target, (t - first) * k + b, traj[seg.start + std::size_t(t)]);
    for (Index t = 0; t < h; ++t) {
      const Vec2& a = data.actions.at(seg.trajectory)[seg.start + std::size_t(t)];
      out.actions[(t * k + b) * 2] = a.x();
      out.actions[(t * k + b) * 2 + 1] = a.y();
    }
  }
  return out;
}

LossTerms step_loss(ModelParams& m, const BoundParams& online, const BoundParams& predictor, const TrainConfig& cfg,
                    const StepBatch& batch) {
  const Index h = cfg.horizon, k = batch.online.dim(0), d = m.config.latent_dim();
  const bool target_first = cfg.regularize_targets;
  const BoundParams target_p(m.target, false);
  const BoundParams idm_p(m.idm, false);
  const auto& enc = m.config.encoder;

  RolloutBatch rb;
  rb.z0 = encoder_forward(enc, online, &m.online_stats, ad::constant(batch.online), Mode::kTrain);
  const ad::Var targets = ad::reshape(
      encoder_forward(enc, target_p, &m.target_stats, ad::constant(batch.target), Mode::kTrain),
      {batch.target.dim(0) / k, k, d});
  if (target_first) {
    rb.z_bar0 = ad::reshape(ad::slice(targets, 0, 1), {k, d});
    rb.z_bar = ad::slice(targets, 1, h + 1);
  } else {
    rb.z_bar = targets;
  }
  rb.actions = ad::constant(batch.actions);
  rb.z_hat = predictor_rollout(m.config, predictor, rb.z0, rb.actions);
  return loss_total(rb, cfg.weights, cfg.toggles, idm_p, cfg.regularize_targets);
}

LossBreakdown train_step(TrainerState& state, const TrainConfig& cfg, const TrainingSet& data,
                         const PreprocConfig& preproc, std::span<const Segment> segments, double lr, double wd,
                         std::uint64_t mask_seed) {
  auto& m = state.model;
  const StepBatch batch = make_step_batch(m.config, cfg, data, preproc, segments, mask_seed);
  const BoundParams online_p(m.online, true);
  const BoundParams predictor_p(m.predictor, true);
  const LossTerms terms = step_loss(m, online_p, predictor_p, cfg, batch);
  if (!std::isfinite(terms.values.total)) {
    throw NumericalError("non-finite training loss at step " + std::to_string(state.global_step));
  }
  if (terms.total.requires_grad()) ad::backward(terms.total);
  std::vector<Tensor> g_enc = online_p.grads();
  std::vector<Tensor> g_pred = predictor_p.grads();
  const double norm = global_norm(g_enc, g_pred);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient at step " + std::to_string(state.global_step));
  if (cfg.grad_clip > 0 && norm > cfg.grad_clip) {
    const double s = cfg.grad_clip / norm;
    for (auto* list : {&g_enc, &g_pred}) {
      for (auto& g : *list) g.data() *= s;
    }
  }
  adamw_step(m.online, g_enc, state.adam_encoder, lr, wd, cfg.adam);
  adamw_step(m.predictor, g_pred, state.adam_predictor, lr, wd, cfg.adam);
  ema_update(m.online, m.target, cfg.ema_decay);
  ++state.global_step;
  return terms.values;
}

std::vector<TrainLogRow> train(TrainerState& state, const TrainConfig& cfg, const TrainingSet& data,
                               const PreprocConfig& preproc, const TrainCallbacks& callbacks) {
  cfg.validate();
  std::vector<TrainLogRow> log;
  if (cfg.epochs == 0) return log;
  std::vector<std::size_t> lengths;
  for (const auto& t : data.inputs) lengths.push_back(t.size());
  const std::int64_t per_epoch = steps_per_epoch(cfg, data);
  const std::int64_t total = per_epoch * cfg.epochs;
  if (state.global_step > total) throw std::invalid_argument("checkpoint is past the configured schedule");
  const auto t0 = std::chrono::steady_clock::now();
  while (state.global_step < total) {
    const std::int64_t step = state.global_step;
    const std::uint64_t step_seed = mix(cfg.seed, std::uint64_t(step));
    const auto segments = sample_rollout_segments(lengths, cfg.horizon, cfg.batch_size, mix(step_seed, kSampleStream));
    TrainLogRow row;
    row.step = step;
    row.epoch = int(step / per_epoch);
    row.lr = lr_schedule(step, total, cfg);
    row.wd = wd_schedule(step, total, cfg);
    row.losses = train_step(state, cfg, data, preproc, segments, row.lr, row.wd, mix(step_seed, kMaskStream));
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(row);
    if (callbacks.on_step) callbacks.on_step(state, row);
    if (state.global_step % per_epoch == 0) {
      round_to_storage(state);
      if (callbacks.on_epoch) callbacks.on_epoch(state, int(state.global_step / per_epoch));
    }
  }
  return log;
}

}  // namespace csiwm
