#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace csiwm::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kIoError = 3, kNumericalError = 4 };

struct SimulateOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<int> trajectories;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
};

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out_dir;
  std::optional<std::string> predictor;
  std::vector<std::string> ablate;  // loss components to switch off
  std::optional<std::filesystem::path> resume;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

struct EvalOptions {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<int> k;
  std::optional<int> bins;
  std::optional<std::string> encoder;  // "online" or "target"
};

struct RolloutOptions {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  std::filesystem::path out;
  std::size_t trajectory = 0;
  std::size_t start = 0;
  int horizon = 0;
};

struct GradcheckOptions {
  std::optional<std::filesystem::path> config;
  double tolerance = 1e-4;
  bool corrupt_gradient = false;  // negative control
};

// Each command reports progress on `out`, problems on `err`, and returns an
// ExitCode.
int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);
int cmd_rollout(const RolloutOptions& opt, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace csiwm::cli
