#include "csiwm/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace csiwm {
namespace {

using ad::Var;

constexpr int kKernel = 3;

Tensor normal_tensor(std::mt19937_64& rng, Shape shape, double std) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

void add_linear(ParamSet& p, std::mt19937_64& rng, const std::string& name, Index in, Index out,
                double weight_scale = 1.0) {
  p.add(name + ".weight", normal_tensor(rng, {in, out}, weight_scale / std::sqrt(double(in))));
  p.add(name + ".bias", Tensor::zeros({out}), false);
}

void add_bn(ParamSet& p, ParamSet& stats, const std::string& name, Index channels) {
  p.add(name + ".gamma", Tensor::constant({channels}, 1.0), false);
  p.add(name + ".beta", Tensor::zeros({channels}), false);
  stats.add(name + ".mean", Tensor::zeros({channels}), false);
  stats.add(name + ".var", Tensor::constant({channels}, 1.0), false);
}

void add_conv(ParamSet& p, std::mt19937_64& rng, const std::string& name, Index kernel, Index in, Index out) {
  const Index fan_in = kernel * kernel * in;
  p.add(name, normal_tensor(rng, {fan_in, out}, std::sqrt(2.0 / double(fan_in))));
}

std::string block_name(std::size_t stage, int block) {
  return "s" + std::to_string(stage) + ".b" + std::to_string(block);
}

ParamSet init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng, ParamSet& stats) {
  ParamSet p;
  add_bn(p, stats, "input.bn", 2);
  add_conv(p, rng, "stem.conv", kKernel, 2, cfg.channels[0]);
  add_bn(p, stats, "stem.bn", cfg.channels[0]);
  Index in = cfg.channels[0];
  for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
    const Index c = cfg.channels[s];
    for (int b = 0; b < cfg.depths[s]; ++b) {
      const std::string n = block_name(s, b);
      add_conv(p, rng, n + ".conv1", kKernel, in, c);
      add_bn(p, stats, n + ".bn1", c);
      add_conv(p, rng, n + ".conv2", kKernel, c, c);
      add_bn(p, stats, n + ".bn2", c);
      if (in != c) add_conv(p, rng, n + ".proj", 1, in, c);
      in = c;
    }
  }
  add_linear(p, rng, "head", in, cfg.latent_dim);
  if (cfg.norm == LatentNorm::kStandardize) {
    p.add("out.gain", Tensor::constant({cfg.latent_dim}, 1.0), false);
    p.add("out.bias", Tensor::zeros({cfg.latent_dim}), false);
  }
  return p;
}

ParamSet init_predictor(const ModelConfig& cfg, std::mt19937_64& rng) {
  ParamSet p;
  const Index d = cfg.latent_dim(), h = cfg.predictor_hidden;
  switch (cfg.predictor) {
    case PredictorKind::kHomomorphic:
      add_linear(p, rng, "gen.fc1", kActionDim, h);
      add_linear(p, rng, "gen.fc2", h, d * d, cfg.generator_init_scale);
      break;
    case PredictorKind::kMlp:
      add_linear(p, rng, "mlp.fc1", d + kActionDim, h);
      add_linear(p, rng, "mlp.fc2", h, d);
      break;
    case PredictorKind::kFilm:
      add_linear(p, rng, "film.gamma.fc1", kActionDim, h);
      add_linear(p, rng, "film.gamma.fc2", h, d, cfg.generator_init_scale);
      add_linear(p, rng, "film.beta.fc1", kActionDim, h);
      add_linear(p, rng, "film.beta.fc2", h, d, cfg.generator_init_scale);
      break;
    case PredictorKind::kGru: {
      const double bound = 1.0 / std::sqrt(double(d));
      std::uniform_real_distribution<double> u(-bound, bound);
      auto uniform = [&](Shape shape) {
        Tensor t(std::move(shape));
        for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
        return t;
      };
      for (const char* gate : {"r", "u", "n"}) {
        const std::string g = std::string("gru.") + gate;
        p.add(g + ".w_in", uniform({kActionDim, d}));
        p.add(g + ".w_hid", uniform({d, d}));
        p.add(g + ".b_in", uniform({d}), false);
        p.add(g + ".b_hid", uniform({d}), false);
      }
      break;
    }
  }
  return p;
}

ParamSet init_idm(const ModelConfig& cfg, std::mt19937_64& rng) {
  ParamSet p;
  const Index d = cfg.latent_dim();
  add_linear(p, rng, "fc1", 2 * d, cfg.idm_hidden, std::sqrt(2.0));
  add_linear(p, rng, "fc2", cfg.idm_hidden, kActionDim);
  return p;
}

Var linear(const BoundParams& p, const std::string& name, const Var& x) {
  return ad::add_rowwise(ad::matmul(x, p[name + ".weight"]), p[name + ".bias"]);
}

Var batch_norm_layer(const EncoderConfig& cfg, const BoundParams& p, ParamSet* stats, const std::string& name,
                     const Var& x, Mode mode, double eps) {
  Var y;
  if (mode == Mode::kTrain) {
    Eigen::VectorXd mu, var;
    y = ad::batch_norm(x, eps, &mu, &var);
    if (stats) {
      const double n = double(x.size() / x.dim(x.value().rank() - 1));
      const double unbias = n > 1 ? n / (n - 1) : 1.0;
      const double m = cfg.bn_momentum;
      auto& rm = stats->at(name + ".mean").data();
      auto& rv = stats->at(name + ".var").data();
      rm = (1 - m) * rm + m * mu;
      rv = (1 - m) * rv + (m * unbias) * var;
    }
  } else {
    if (!stats) throw std::invalid_argument("batch norm in evaluation mode needs running statistics");
    const auto& rm = stats->at(name + ".mean").data();
    const auto& rv = stats->at(name + ".var").data();
    const Eigen::VectorXd inv = (rv.array() + eps).rsqrt().matrix();
    const Index c = inv.size();
    y = ad::add_rowwise(ad::mul_rowwise(x, ad::constant(Tensor({c}, inv))),
                        ad::constant(Tensor({c}, Eigen::VectorXd(-rm.cwiseProduct(inv)))));
  }
  return ad::add_rowwise(ad::mul_rowwise(y, p[name + ".gamma"]), p[name + ".beta"]);
}

Var global_average_pool(const Var& x) {
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  return ad::scale(ad::sum_axis(ad::reshape(x, {n, h * w, c}), 1), 1.0 / double(h * w));
}

Var single_row(const Eigen::VectorXd& v) { return ad::constant(Tensor({1, v.size()}, v)); }

Var action_row(const Vec2& a) { return ad::constant(Tensor({1, kActionDim}, Eigen::VectorXd(a))); }

void check_latent(const ModelParams& m, const Eigen::VectorXd& z) {
  if (z.size() != m.config.latent_dim()) {
    throw std::invalid_argument("latent has length " + std::to_string(z.size()) + ", expected " +
                                std::to_string(m.config.latent_dim()));
  }
}

}  // namespace

std::string_view to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kHomomorphic: return "homomorphic";
    case PredictorKind::kMlp: return "mlp";
    case PredictorKind::kFilm: return "film";
    case PredictorKind::kGru: return "gru";
  }
  return "?";
}

PredictorKind parse_predictor_kind(std::string_view name) {
  for (auto k : {PredictorKind::kHomomorphic, PredictorKind::kMlp, PredictorKind::kFilm, PredictorKind::kGru}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown predictor kind: " + std::string(name));
}

std::string_view to_string(LatentNorm norm) {
  return norm == LatentNorm::kStandardize ? "standardize" : "l2";
}

LatentNorm parse_latent_norm(std::string_view name) {
  if (name == "standardize") return LatentNorm::kStandardize;
  if (name == "l2") return LatentNorm::kL2;
  throw std::invalid_argument("unknown latent normalization: " + std::string(name));
}

void EncoderConfig::validate() const {
  if (latent_dim < 2) throw std::invalid_argument("latent_dim must be at least 2");
  if (depths.empty() || depths.size() != channels.size()) {
    throw std::invalid_argument("encoder depths and channels must be non-empty and of equal length");
  }
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] < 1 || channels[i] < 1) throw std::invalid_argument("encoder depths and channels must be positive");
  }
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw std::invalid_argument("bn_momentum must be in (0, 1]");
  if (!(bn_eps > 0)) throw std::invalid_argument("bn_eps must be positive");
  if (!(input_bn_eps > 0)) throw std::invalid_argument("input_bn_eps must be positive");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (predictor_hidden < 1 || idm_hidden < 1) throw std::invalid_argument("hidden widths must be positive");
  if (!std::isfinite(generator_init_scale)) throw std::invalid_argument("generator_init_scale must be finite");
  if (input_rows < 0 || input_taps < 0) throw std::invalid_argument("input shape must be non-negative");
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.config = cfg;
  m.online = init_encoder(cfg.encoder, rng, m.online_stats);
  m.target = m.online;
  m.target_stats = m.online_stats;
  m.predictor = init_predictor(cfg, rng);
  m.idm = init_idm(cfg, rng);
  return m;
}

Tensor to_nhwc(std::span<const ModelInput> inputs) {
  if (inputs.empty()) throw std::invalid_argument("to_nhwc: empty batch");
  const Index rows = inputs[0].rows(), taps = inputs[0].taps();
  Tensor out({Index(inputs.size()), rows, taps, 2});
  double* dst = out.ptr();
  for (const auto& in : inputs) {
    if (in.x.shape() != Shape{2, rows, taps}) {
      throw std::invalid_argument("to_nhwc: input shape " + shape_string(in.x.shape()) + " differs from batch");
    }
    const double* src = in.x.ptr();
    const Index plane = rows * taps;
    for (Index i = 0; i < plane; ++i) {
      *dst++ = src[i];
      *dst++ = src[plane + i];
    }
  }
  return out;
}

Var encoder_forward(const EncoderConfig& cfg, const BoundParams& p, ParamSet* stats, const Var& x, Mode mode) {
  if (x.value().rank() != 4 || x.dim(3) != 2) {
    throw std::invalid_argument("encoder expects (N, rows, taps, 2), got " + shape_string(x.shape()));
  }
  // Magnitude and phase differ in scale by orders of magnitude; normalize before mixing them.
  const Var in = batch_norm_layer(cfg, p, stats, "input.bn", x, mode, cfg.input_bn_eps);
  Var h = ad::gelu(batch_norm_layer(cfg, p, stats, "stem.bn", ad::conv2d(in, p["stem.conv"], kKernel, kKernel), mode, cfg.bn_eps));
  for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
    for (int b = 0; b < cfg.depths[s]; ++b) {
      const std::string n = block_name(s, b);
      Var y = ad::gelu(batch_norm_layer(cfg, p, stats, n + ".bn1", ad::conv2d(h, p[n + ".conv1"], kKernel, kKernel), mode, cfg.bn_eps));
      y = batch_norm_layer(cfg, p, stats, n + ".bn2", ad::conv2d(y, p[n + ".conv2"], kKernel, kKernel), mode, cfg.bn_eps);
      const Var skip = p.contains(n + ".proj") ? ad::matmul(h, p[n + ".proj"]) : h;
      h = ad::gelu(ad::add(y, skip));
    }
    h = ad::avg_pool2(h);
  }
  Var z = linear(p, "head", global_average_pool(h));
  if (cfg.norm == LatentNorm::kStandardize) {
    z = ad::add_rowwise(ad::mul_rowwise(ad::standardize_rows(z, 1e-10), p["out.gain"]), p["out.bias"]);
  } else {
    z = ad::l2_normalize_rows(z, 1e-12);
  }
  return z;
}

Var generator_forward(const ModelConfig& cfg, const BoundParams& p, const Var& a) {
  if (cfg.predictor != PredictorKind::kHomomorphic) {
    throw std::invalid_argument("generator requires the homomorphic predictor");
  }
  const Index d = cfg.latent_dim();
  const Var flat = linear(p, "gen.fc2", ad::gelu(linear(p, "gen.fc1", a)));
  return ad::reshape(flat, {a.dim(0), d, d});
}

Var predictor_step(const ModelConfig& cfg, const BoundParams& p, const Var& z, const Var& a) {
  if (z.value().rank() != 2 || a.value().rank() != 2 || z.dim(0) != a.dim(0) || z.dim(1) != cfg.latent_dim() ||
      a.dim(1) != kActionDim) {
    throw std::invalid_argument("predictor step: bad shapes " + shape_string(z.shape()) + " and " +
                                shape_string(a.shape()));
  }
  const Index k = z.dim(0), d = cfg.latent_dim();
  switch (cfg.predictor) {
    case PredictorKind::kHomomorphic: {
      const Var rho = ad::expm(generator_forward(cfg, p, a));
      return ad::reshape(ad::batched_matmul(rho, ad::reshape(z, {k, d, 1})), {k, d});
    }
    case PredictorKind::kMlp:
      return linear(p, "mlp.fc2", ad::gelu(linear(p, "mlp.fc1", ad::concat({z, a}, 1))));
    case PredictorKind::kFilm: {
      const Var gamma = linear(p, "film.gamma.fc2", ad::gelu(linear(p, "film.gamma.fc1", a)));
      const Var beta = linear(p, "film.beta.fc2", ad::gelu(linear(p, "film.beta.fc1", a)));
      return ad::add(ad::add(z, ad::mul(gamma, z)), beta);
    }
    case PredictorKind::kGru: {
      auto pre = [&](const std::string& g, const Var& h) {
        return ad::add_rowwise(ad::matmul(h, p["gru." + g + ".w_hid"]), p["gru." + g + ".b_hid"]);
      };
      auto in = [&](const std::string& g) {
        return ad::add_rowwise(ad::matmul(a, p["gru." + g + ".w_in"]), p["gru." + g + ".b_in"]);
      };
      const Var r = ad::sigmoid(ad::add(in("r"), pre("r", z)));
      const Var u = ad::sigmoid(ad::add(in("u"), pre("u", z)));
      const Var n = ad::tanh(ad::add(in("n"), ad::mul(r, pre("n", z))));
      return ad::add(z, ad::mul(u, ad::sub(n, z)));
    }
  }
  throw std::invalid_argument("unknown predictor kind");
}

Var predictor_rollout(const ModelConfig& cfg, const BoundParams& p, const Var& z0, const Var& actions) {
  if (actions.value().rank() != 3 || actions.dim(0) < 1) {
    throw std::invalid_argument("rollout expects actions of shape (H, K, 2), H >= 1");
  }
  const Index h = actions.dim(0), k = actions.dim(1);
  std::vector<Var> out;
  out.reserve(std::size_t(h));
  Var z = z0;
  for (Index i = 0; i < h; ++i) {
    z = predictor_step(cfg, p, z, ad::reshape(ad::slice(actions, i, i + 1), {k, kActionDim}));
    out.push_back(ad::reshape(z, {1, k, z.dim(1)}));
  }
  return ad::concat(out, 0);
}

Var idm_forward(const BoundParams& p, const Var& z_t, const Var& z_next) {
  const Index r = z_t.value().rank();
  if (z_t.shape() != z_next.shape() || r < 1) throw std::invalid_argument("idm: latent shapes differ");
  const Var joint = ad::concat({z_t, z_next}, r - 1);
  return linear(p, "fc2", ad::relu(linear(p, "fc1", joint)));
}

Eigen::VectorXd encode(const ModelParams& m, const ModelInput& x, bool target) {
  return encode_batch(m, std::span<const ModelInput>(&x, 1), target).row(0).transpose();
}

Eigen::MatrixXd encode_batch(const ModelParams& m, std::span<const ModelInput> xs, bool target) {
  const auto& cfg = m.config;
  for (const auto& x : xs) {
    if (x.x.rank() != 3 || x.x.dim(0) != 2 || (cfg.input_rows && x.rows() != cfg.input_rows) ||
        (cfg.input_taps && x.taps() != cfg.input_taps)) {
      throw std::invalid_argument("model input shape " + shape_string(x.x.shape()) + " does not match config");
    }
  }
  const BoundParams p(target ? m.target : m.online, false);
  ParamSet stats = target ? m.target_stats : m.online_stats;
  const Var z = encoder_forward(cfg.encoder, p, &stats, ad::constant(to_nhwc(xs)), Mode::kEval);
  return z.value().matrix();
}

Eigen::MatrixXd generator(const ModelParams& m, const Vec2& a) {
  const BoundParams p(m.predictor, false);
  const Var g = generator_forward(m.config, p, action_row(a));
  const Index d = m.config.latent_dim();
  return Eigen::Map<const RowMatrixXd>(g.value().ptr(), d, d);
}

Eigen::VectorXd step(const ModelParams& m, const Eigen::VectorXd& z, const Vec2& a) {
  check_latent(m, z);
  const BoundParams p(m.predictor, false);
  return predictor_step(m.config, p, single_row(z), action_row(a)).value().data();
}

Eigen::MatrixXd rollout(const ModelParams& m, const Eigen::VectorXd& z, std::span<const Vec2> actions) {
  check_latent(m, z);
  if (actions.empty()) throw std::invalid_argument("rollout needs at least one action");
  const BoundParams p(m.predictor, false);
  const Index h = Index(actions.size());
  Tensor acts({h, 1, kActionDim});
  for (Index i = 0; i < h; ++i) {
    acts[2 * i] = actions[std::size_t(i)].x();
    acts[2 * i + 1] = actions[std::size_t(i)].y();
  }
  const Var out = predictor_rollout(m.config, p, single_row(z), ad::constant(acts));
  return Eigen::Map<const RowMatrixXd>(out.value().ptr(), h, z.size());
}

Eigen::VectorXd predict_baseline(const ModelParams& m, PredictorKind kind, const Eigen::VectorXd& z, const Vec2& a) {
  if (kind == PredictorKind::kHomomorphic) throw std::invalid_argument("homomorphic is not a baseline predictor");
  if (kind != m.config.predictor) {
    throw std::invalid_argument("model holds " + std::string(to_string(m.config.predictor)) + " weights, not " +
                                std::string(to_string(kind)));
  }
  return step(m, z, a);
}

Vec2 idm_predict(const ModelParams& m, const Eigen::VectorXd& z_t, const Eigen::VectorXd& z_next) {
  check_latent(m, z_t);
  check_latent(m, z_next);
  const BoundParams p(m.idm, false);
  const auto& v = idm_forward(p, single_row(z_t), single_row(z_next)).value();
  return Vec2(v[0], v[1]);
}

void ema_update(const ParamSet& online, ParamSet& target, double decay) {
  if (!(decay >= 0 && decay <= 1)) throw std::invalid_argument("EMA decay must be in [0, 1]");
  if (!online.same_layout(target)) throw std::invalid_argument("EMA update: parameter layouts differ");
  for (std::size_t i = 0; i < online.size(); ++i) {
    auto& t = target.entries()[i].value.data();
    const auto& o = online.entries()[i].value.data();
    t = decay * t + (1 - decay) * o;
  }
}

}  // namespace csiwm
