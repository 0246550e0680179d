#pragma once

#include "csiwm/params.hpp"
#include "csiwm/preprocess.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csiwm {

inline constexpr int kActionDim = 2;

enum class PredictorKind { kHomomorphic, kMlp, kFilm, kGru };
std::string_view to_string(PredictorKind kind);
/// Throws std::invalid_argument for an unknown name.
PredictorKind parse_predictor_kind(std::string_view name);

enum class LatentNorm { kStandardize, kL2 };
std::string_view to_string(LatentNorm norm);
LatentNorm parse_latent_norm(std::string_view name);

struct EncoderConfig {
  std::vector<int> depths = {1, 1, 1, 1};
  std::vector<int> channels = {16, 32, 32, 32};
  int latent_dim = 16;
  LatentNorm norm = LatentNorm::kStandardize;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double input_bn_eps = 1e-10;  // raw magnitudes have variance far below 1e-5

  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  PredictorKind predictor = PredictorKind::kHomomorphic;
  int predictor_hidden = 64;
  int idm_hidden = 64;
  double generator_init_scale = 1e-2;  // scale of the last generator layer at init
  Index input_rows = 0;                // 0 leaves the input shape unchecked
  Index input_taps = 0;

  int latent_dim() const { return encoder.latent_dim; }
  void validate() const;
};

enum class Mode { kTrain, kEval };

/// All weights of the world model. Running normalization statistics live
/// next to the encoder they belong to.
struct ModelParams {
  ModelConfig config;
  ParamSet online;        // encoder
  ParamSet online_stats;
  ParamSet target;        // EMA copy of the encoder
  ParamSet target_stats;
  ParamSet predictor;     // transition of the configured kind
  ParamSet idm;           // frozen probe
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Stacks inputs into an NHWC batch of shape (N, rows, taps, 2).
Tensor to_nhwc(std::span<const ModelInput> inputs);

// Graph-level building blocks, batched over the leading axis.

/// x: (N, rows, taps, 2) -> (N, D). In train mode batch statistics are used
/// and, when `stats` is given, folded into its running estimates.
ad::Var encoder_forward(const EncoderConfig& cfg, const BoundParams& p, ParamSet* stats, const ad::Var& x,
                        Mode mode);
/// a: (K, 2) -> (K, D, D).
ad::Var generator_forward(const ModelConfig& cfg, const BoundParams& p, const ad::Var& a);
/// z: (K, D), a: (K, 2) -> (K, D).
ad::Var predictor_step(const ModelConfig& cfg, const BoundParams& p, const ad::Var& z, const ad::Var& a);
/// z0: (K, D), actions: (H, K, 2) -> (H, K, D), earliest action first.
ad::Var predictor_rollout(const ModelConfig& cfg, const BoundParams& p, const ad::Var& z0, const ad::Var& actions);
/// (..., D) pairs -> (..., 2).
ad::Var idm_forward(const BoundParams& p, const ad::Var& z_t, const ad::Var& z_next);

// Single-sample evaluation.

/// Evaluation-mode embedding by the online or the target encoder.
Eigen::VectorXd encode(const ModelParams& m, const ModelInput& x, bool target = false);
/// One embedding per row.
Eigen::MatrixXd encode_batch(const ModelParams& m, std::span<const ModelInput> xs, bool target = false);

/// Lie-algebra element for an action. Requires the homomorphic predictor.
Eigen::MatrixXd generator(const ModelParams& m, const Vec2& a);
/// One transition with the configured predictor.
Eigen::VectorXd step(const ModelParams& m, const Eigen::VectorXd& z, const Vec2& a);
/// h x D, row i is the latent after actions[0..i].
Eigen::MatrixXd rollout(const ModelParams& m, const Eigen::VectorXd& z, std::span<const Vec2> actions);
/// One transition of a baseline predictor; `kind` must match the model.
Eigen::VectorXd predict_baseline(const ModelParams& m, PredictorKind kind, const Eigen::VectorXd& z, const Vec2& a);
Vec2 idm_predict(const ModelParams& m, const Eigen::VectorXd& z_t, const Eigen::VectorXd& z_next);

/// target <- decay * target + (1 - decay) * online, per element.
void ema_update(const ParamSet& online, ParamSet& target, double decay);

}  // namespace csiwm
