#pragma once

#include "csiwm/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace csiwm {

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct GradReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
    Index probes = 0;
  };
  std::vector<Entry> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  Index probes = 0;
  bool pass = false;
};

struct GradCheckOptions {
  /// Tensors up to this size are probed coordinate by coordinate; larger
  /// ones along random unit directions.
  Index max_coordinates = 32;
  Index directions = 6;
  std::uint64_t seed = 7;
};

/// Builds a scalar loss from one Var per parameter, in the given order.
using LossBuilder = std::function<ad::Var(const std::vector<ad::Var>&)>;

/// Compares reverse-mode gradients with central differences
/// (f(p + eps d) - f(p - eps d)) / 2 eps. Relative error uses the
/// denominator max(|g|, |g_fd|, 1e-8).
GradReport grad_check(const LossBuilder& loss, const std::vector<NamedTensor>& params, double epsilon,
                      double tolerance, const GradCheckOptions& options = {});

}  // namespace csiwm
