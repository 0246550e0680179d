#pragma once

#include "csiwm/simulator.hpp"
#include "csiwm/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace csiwm {

struct PreprocConfig {
  int taps = 16;             // retained delay taps
  double mask_ratio = 0.15;  // tube masking ratio
  std::uint64_t mask_seed = 0;

  void validate(int subcarriers) const;
};

/// Real model input of shape (2, B*M, taps): channel 0 is magnitude,
/// channel 1 the wrapped phase in (-pi, pi]. Rows are BS-major.
struct ModelInput {
  Tensor x;

  Index rows() const { return x.dim(1); }
  Index taps() const { return x.dim(2); }
};

/// Inverse DFT along subcarriers (with the 1/N factor), first `taps` taps.
CsiTensor truncate_delay(const CsiTensor& h, int taps);

ModelInput to_model_input(const CsiTensor& truncated);

inline ModelInput preprocess(const CsiTensor& h, const PreprocConfig& cfg) {
  return to_model_input(truncate_delay(h, cfg.taps));
}

/// floor(ratio * rows * taps) distinct (row, tap) cells drawn without
/// replacement, as flat indices row * taps + tap, ascending.
std::vector<Index> tube_mask_cells(Index rows, Index taps, double ratio, std::uint64_t seed);

/// Zeroes both channels of the same cells at every step of the sequence.
std::vector<ModelInput> tube_mask(std::span<const ModelInput> sequence, double ratio, std::uint64_t seed);

}  // namespace csiwm
