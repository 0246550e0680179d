#pragma once

#include "csiwm/run_config.hpp"
#include "csiwm/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace csiwm {

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'W', 'M', '0', '0', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncated, kMismatch, kMalformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Config plus full trainer state. Tensors are stored as f32, so a state is
/// reproduced exactly only after round_to_storage.
struct Checkpoint {
  RunConfig config;
  TrainerState state;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csiwm
