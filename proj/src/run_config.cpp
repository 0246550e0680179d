#include "csiwm/run_config.hpp"

#include "csiwm/binary_io.hpp"

#include <json.hpp>

#include <set>
#include <type_traits>

namespace csiwm {
namespace {

using Json = nlohmann::ordered_json;

/// Reads the keys of one JSON object into struct fields, remembering which
/// keys were consumed so that leftovers can be reported.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, child(key));
  }

  template <typename F>
  void section(const std::string& key, F&& read) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, child(key));
    read(s);
    s.finish();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + child(key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  static T convert(const Json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, Vec3>) {
      if (!v.is_array() || v.size() != 3) throw ConfigError(at + ": expected [x, y, z]");
      Vec3 out;
      for (int i = 0; i < 3; ++i) out[i] = convert<double>(v[std::size_t(i)], at + "[" + std::to_string(i) + "]");
      return out;
    } else {
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json vec3(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json vec3_list(const std::vector<Vec3>& vs) {
  Json out = Json::array();
  for (const auto& v : vs) out.push_back(vec3(v));
  return out;
}

Json to_json(const RunConfig& c) {
  const auto& s = c.scene;
  const auto& m = c.motion;
  const auto& e = c.model.encoder;
  const auto& t = c.train;
  Json j;
  j["scene"] = {{"num_bs", s.num_bs},
                {"antennas", s.antennas},
                {"subcarriers", s.subcarriers},
                {"carrier_hz", s.carrier_hz},
                {"bandwidth_hz", s.bandwidth_hz},
                {"bs_positions", vec3_list(s.bs_positions)},
                {"bs_array_azimuth", s.bs_array_azimuth},
                {"element_spacing", s.element_spacing},
                {"paths", s.paths},
                {"scatterers", vec3_list(s.scatterers)},
                {"noise_std", s.noise_std},
                {"room", {{"min", vec3(s.room.min)}, {"max", vec3(s.room.max)}}},
                {"ue_height", s.ue_height}};
  j["motion"] = {{"dt", m.dt},
                 {"speed_min", m.speed_min},
                 {"speed_max", m.speed_max},
                 {"turn_rate_std", m.turn_rate_std},
                 {"waypoints", m.waypoints},
                 {"seed", m.seed}};
  j["preproc"] = {{"taps", c.preproc.taps}, {"mask_ratio", c.preproc.mask_ratio}, {"mask_seed", c.preproc.mask_seed}};
  j["model"] = {{"encoder",
                 {{"depths", e.depths},
                  {"channels", e.channels},
                  {"latent_dim", e.latent_dim},
                  {"norm", std::string(to_string(e.norm))},
                  {"bn_momentum", e.bn_momentum},
                  {"bn_eps", e.bn_eps},
                  {"input_bn_eps", e.input_bn_eps}}},
                {"predictor", std::string(to_string(c.model.predictor))},
                {"predictor_hidden", c.model.predictor_hidden},
                {"idm_hidden", c.model.idm_hidden},
                {"generator_init_scale", c.model.generator_init_scale},
                {"input_rows", c.model.input_rows},
                {"input_taps", c.model.input_taps}};
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"horizon", t.horizon},
                {"steps_per_epoch", t.steps_per_epoch},
                {"lr_start", t.lr_start},
                {"lr_peak", t.lr_peak},
                {"lr_end", t.lr_end},
                {"warmup_fraction", t.warmup_fraction},
                {"wd_start", t.wd_start},
                {"wd_end", t.wd_end},
                {"ema_decay", t.ema_decay},
                {"grad_clip", t.grad_clip},
                {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
                {"weights",
                 {{"tf", t.weights.tf},
                  {"roll", t.weights.roll},
                  {"var", t.weights.var},
                  {"cov", t.weights.cov},
                  {"idm", t.weights.idm},
                  {"gamma", t.weights.gamma},
                  {"epsilon", t.weights.epsilon}}},
                {"toggles",
                 {{"tf", t.toggles.tf},
                  {"roll", t.toggles.roll},
                  {"var", t.toggles.var},
                  {"cov", t.toggles.cov},
                  {"idm", t.toggles.idm}}},
                {"regularize_targets", t.regularize_targets},
                {"seed", t.seed}};
  j["eval"] = {{"k", c.eval.k}, {"bins", c.eval.bins}, {"encoder", c.eval.encoder}};
  j["data"] = {{"train_trajectories", c.data.train_trajectories},
               {"eval_trajectories", c.data.eval_trajectories},
               {"steps", c.data.steps},
               {"eval_seed", c.data.eval_seed}};
  return j;
}

RunConfig from_json(const Json& j) {
  RunConfig c;
  Section root(j, "");
  root.section("scene", [&](Section& s) {
    auto& v = c.scene;
    s.get("num_bs", v.num_bs);
    s.get("antennas", v.antennas);
    s.get("subcarriers", v.subcarriers);
    s.get("carrier_hz", v.carrier_hz);
    s.get("bandwidth_hz", v.bandwidth_hz);
    s.get("bs_positions", v.bs_positions);
    s.get("bs_array_azimuth", v.bs_array_azimuth);
    s.get("element_spacing", v.element_spacing);
    s.get("paths", v.paths);
    s.get("scatterers", v.scatterers);
    s.get("noise_std", v.noise_std);
    s.section("room", [&](Section& r) {
      r.get("min", v.room.min);
      r.get("max", v.room.max);
    });
    s.get("ue_height", v.ue_height);
  });
  root.section("motion", [&](Section& s) {
    auto& v = c.motion;
    s.get("dt", v.dt);
    s.get("speed_min", v.speed_min);
    s.get("speed_max", v.speed_max);
    s.get("turn_rate_std", v.turn_rate_std);
    s.get("waypoints", v.waypoints);
    s.get("seed", v.seed);
  });
  root.section("preproc", [&](Section& s) {
    s.get("taps", c.preproc.taps);
    s.get("mask_ratio", c.preproc.mask_ratio);
    s.get("mask_seed", c.preproc.mask_seed);
  });
  root.section("model", [&](Section& s) {
    auto& v = c.model;
    s.section("encoder", [&](Section& e) {
      e.get("depths", v.encoder.depths);
      e.get("channels", v.encoder.channels);
      e.get("latent_dim", v.encoder.latent_dim);
      std::string norm(to_string(v.encoder.norm));
      e.get("norm", norm);
      try {
        v.encoder.norm = parse_latent_norm(norm);
      } catch (const std::invalid_argument& err) {
        throw ConfigError(std::string("model.encoder.norm: ") + err.what());
      }
      e.get("bn_momentum", v.encoder.bn_momentum);
      e.get("bn_eps", v.encoder.bn_eps);
      e.get("input_bn_eps", v.encoder.input_bn_eps);
    });
    std::string kind(to_string(v.predictor));
    s.get("predictor", kind);
    try {
      v.predictor = parse_predictor_kind(kind);
    } catch (const std::invalid_argument& err) {
      throw ConfigError(std::string("model.predictor: ") + err.what());
    }
    s.get("predictor_hidden", v.predictor_hidden);
    s.get("idm_hidden", v.idm_hidden);
    s.get("generator_init_scale", v.generator_init_scale);
    s.get("input_rows", v.input_rows);
    s.get("input_taps", v.input_taps);
  });
  root.section("train", [&](Section& s) {
    auto& v = c.train;
    s.get("epochs", v.epochs);
    s.get("batch_size", v.batch_size);
    s.get("horizon", v.horizon);
    s.get("steps_per_epoch", v.steps_per_epoch);
    s.get("lr_start", v.lr_start);
    s.get("lr_peak", v.lr_peak);
    s.get("lr_end", v.lr_end);
    s.get("warmup_fraction", v.warmup_fraction);
    s.get("wd_start", v.wd_start);
    s.get("wd_end", v.wd_end);
    s.get("ema_decay", v.ema_decay);
    s.get("grad_clip", v.grad_clip);
    s.section("adam", [&](Section& a) {
      a.get("beta1", v.adam.beta1);
      a.get("beta2", v.adam.beta2);
      a.get("epsilon", v.adam.epsilon);
    });
    s.section("weights", [&](Section& w) {
      w.get("tf", v.weights.tf);
      w.get("roll", v.weights.roll);
      w.get("var", v.weights.var);
      w.get("cov", v.weights.cov);
      w.get("idm", v.weights.idm);
      w.get("gamma", v.weights.gamma);
      w.get("epsilon", v.weights.epsilon);
    });
    s.section("toggles", [&](Section& t) {
      t.get("tf", v.toggles.tf);
      t.get("roll", v.toggles.roll);
      t.get("var", v.toggles.var);
      t.get("cov", v.toggles.cov);
      t.get("idm", v.toggles.idm);
    });
    s.get("regularize_targets", v.regularize_targets);
    s.get("seed", v.seed);
  });
  root.section("eval", [&](Section& s) {
    s.get("k", c.eval.k);
    s.get("bins", c.eval.bins);
    s.get("encoder", c.eval.encoder);
  });
  root.section("data", [&](Section& s) {
    s.get("train_trajectories", c.data.train_trajectories);
    s.get("eval_trajectories", c.data.eval_trajectories);
    s.get("steps", c.data.steps);
    s.get("eval_seed", c.data.eval_seed);
  });
  root.finish();
  return c;
}

}  // namespace

void RunConfig::validate() const {
  try {
    scene.validate();
    motion.validate();
    preproc.validate(scene.subcarriers);
    model.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (eval.k < 0) throw ConfigError("eval.k must be >= 0");
  if (eval.bins < 2) throw ConfigError("eval.bins must be >= 2");
  if (eval.encoder != "online" && eval.encoder != "target") throw ConfigError("eval.encoder must be online or target");
  if (data.train_trajectories < 1 || data.eval_trajectories < 1) throw ConfigError("data: trajectory counts must be >= 1");
  if (data.steps < 1) throw ConfigError("data.steps must be >= 1");
}

RunConfig parse_run_config(std::string_view json) {
  Json j;
  try {
    j = Json::parse(json);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig c = from_json(j);
  c.validate();
  return c;
}

std::string dump_run_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(io::read_file(path)); }

}  // namespace csiwm
