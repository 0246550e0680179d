#pragma once

#include "csiwm/losses.hpp"
#include "csiwm/model.hpp"
#include "csiwm/preprocess.hpp"
#include "csiwm/simulator.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace csiwm {

/// Raised when training produces a non-finite loss or gradient.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;  // K
  int horizon = 6;      // H
  int steps_per_epoch = 0;  // 0: ceil(snapshots / (K * (H + 1)))
  double lr_start = 1e-4;
  double lr_peak = 3e-4;
  double lr_end = 1e-6;
  double warmup_fraction = 0.05;
  double wd_start = 0.04;
  double wd_end = 0.4;
  double ema_decay = 0.9995;
  double grad_clip = 10.0;  // global norm; <= 0 disables
  AdamConfig adam;
  LossWeights weights;
  LossToggles toggles;
  bool regularize_targets = false;  // VICReg and IDM on the target branch
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m, v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
};

struct TrainerState {
  ModelParams model;
  AdamState adam_encoder;
  AdamState adam_predictor;
  std::int64_t global_step = 0;
};

struct TrainLogRow {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0, wd = 0;
  LossBreakdown losses;
  double seconds = 0;
};

/// Preprocessed trajectories ready for segment sampling.
struct TrainingSet {
  std::vector<std::vector<ModelInput>> inputs;
  std::vector<std::vector<Vec2>> actions;

  Index snapshot_count() const;
};

TrainingSet prepare_training_set(std::span<const TrajectoryRecord> data, const PreprocConfig& preproc);

struct Segment {
  std::size_t trajectory = 0;
  std::size_t start = 0;  // inputs start..start+H, actions start..start+H-1

  bool operator==(const Segment&) const = default;
};

/// K segments drawn uniformly (with replacement) over all valid
/// (trajectory, start) pairs. `lengths` are snapshot counts.
std::vector<Segment> sample_rollout_segments(std::span<const std::size_t> lengths, int horizon, int batch_size,
                                             std::uint64_t seed);

double lr_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);
double wd_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

/// Bias-corrected Adam moments plus decoupled decay on entries flagged for it.
void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr, double wd,
                const AdamConfig& cfg = {});

/// Rounds every stored value to single precision, as written to checkpoints.
void round_to_storage(TrainerState& state);

int steps_per_epoch(const TrainConfig& cfg, const TrainingSet& data);

TrainerState init_trainer(const ModelConfig& model, const TrainConfig& cfg, const TrainingSet& data);

struct TrainCallbacks {
  std::function<void(const TrainerState&, const TrainLogRow&)> on_step;
  /// Called after the state has been rounded to storage precision.
  std::function<void(const TrainerState&, int epoch)> on_epoch;
};

/// Runs (or resumes) training until cfg.epochs epochs are complete.
std::vector<TrainLogRow> train(TrainerState& state, const TrainConfig& cfg, const TrainingSet& data,
                               const PreprocConfig& preproc, const TrainCallbacks& callbacks = {});

/// Network inputs of one step: masked online snapshots (K, rows, taps, 2),
/// clean target snapshots stacked step-major, and actions (H, K, 2).
struct StepBatch {
  Tensor online, target, actions;
};

StepBatch make_step_batch(const ModelConfig& model, const TrainConfig& cfg, const TrainingSet& data,
                          const PreprocConfig& preproc, std::span<const Segment> segments, std::uint64_t mask_seed);

/// Training objective on one batch. Running statistics in `m` are updated.
LossTerms step_loss(ModelParams& m, const BoundParams& online, const BoundParams& predictor, const TrainConfig& cfg,
                    const StepBatch& batch);

/// One optimization step on the given segments; returns its loss values.
LossBreakdown train_step(TrainerState& state, const TrainConfig& cfg, const TrainingSet& data,
                         const PreprocConfig& preproc, std::span<const Segment> segments, double lr, double wd,
                         std::uint64_t mask_seed);

}  // namespace csiwm
