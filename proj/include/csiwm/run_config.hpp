#pragma once

#include "csiwm/model.hpp"
#include "csiwm/preprocess.hpp"
#include "csiwm/simulator.hpp"
#include "csiwm/trainer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace csiwm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalConfig {
  int k = 0;  // 0: ceil(0.05 n) per trajectory
  int bins = 50;
  std::string encoder = "online";  // "online" or "target" (EMA)
};

/// Dataset sizes used when one config drives the whole pipeline.
struct DataConfig {
  int train_trajectories = 64;
  int eval_trajectories = 16;
  int steps = 200;
  std::uint64_t eval_seed = 5000;  // motion seed of the held-out set
};

/// Everything a run depends on, as one JSON document.
struct RunConfig {
  SceneConfig scene;
  MotionConfig motion;
  PreprocConfig preproc;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;

  void validate() const;
};

/// Rejects unknown keys and wrongly typed values; missing keys keep their defaults.
RunConfig parse_run_config(std::string_view json);
std::string dump_run_config(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace csiwm
