#include "csiwm/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace csiwm {

void PreprocConfig::validate(int subcarriers) const {
  if (taps < 1 || taps > subcarriers) {
    throw std::invalid_argument("preproc: taps must lie in [1, " + std::to_string(subcarriers) + "], got " +
                                std::to_string(taps));
  }
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw std::invalid_argument("preproc: mask_ratio must lie in [0, 1]");
}

CsiTensor truncate_delay(const CsiTensor& h, int taps) {
  const int n = h.subcarriers;
  if (taps < 1 || taps > n) {
    throw std::invalid_argument("truncate_delay: taps " + std::to_string(taps) + " outside [1, " + std::to_string(n) + "]");
  }
  // idft(tap, k) = exp(+j 2 pi k tap / N) / N
  Eigen::MatrixXcd idft(taps, n);
  for (int t = 0; t < taps; ++t)
    for (int k = 0; k < n; ++k) {
      const long long phase_index = (static_cast<long long>(k) * t) % n;
      idft(t, k) = std::polar(1.0 / n, 2.0 * std::numbers::pi * double(phase_index) / n);
    }
  CsiTensor out(h.num_bs, h.antennas, taps);
  const Eigen::Map<const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> freq(
      h.data.data(), h.rows(), n);
  Eigen::Map<Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> delay(
      out.data.data(), out.rows(), taps);
  delay.noalias() = freq * idft.transpose();
  return out;
}

ModelInput to_model_input(const CsiTensor& truncated) {
  const Index rows = truncated.rows();
  const Index taps = truncated.subcarriers;
  ModelInput in{Tensor(Shape{2, rows, taps})};
  const Index plane = rows * taps;
  for (Index i = 0; i < plane; ++i) {
    const std::complex<double> v = truncated.data[i];
    in.x[i] = std::abs(v);
    double phase = (v.real() == 0.0 && v.imag() == 0.0) ? 0.0 : std::atan2(v.imag(), v.real());
    if (phase <= -std::numbers::pi) phase = std::numbers::pi;
    in.x[plane + i] = phase;
  }
  return in;
}

std::vector<Index> tube_mask_cells(Index rows, Index taps, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("tube_mask: ratio must lie in [0, 1]");
  const Index total = rows * taps;
  const auto count = std::min(total, Index(std::floor(ratio * double(total) + 1e-9)));
  std::vector<Index> cells(static_cast<std::size_t>(total));
  std::iota(cells.begin(), cells.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, total - 1);
    std::swap(cells[std::size_t(i)], cells[std::size_t(pick(rng))]);
  }
  cells.resize(std::size_t(count));
  std::sort(cells.begin(), cells.end());
  return cells;
}

std::vector<ModelInput> tube_mask(std::span<const ModelInput> sequence, double ratio, std::uint64_t seed) {
  std::vector<ModelInput> out(sequence.begin(), sequence.end());
  if (out.empty()) return out;
  const Index rows = out.front().rows(), taps = out.front().taps();
  const auto cells = tube_mask_cells(rows, taps, ratio, seed);
  const Index plane = rows * taps;
  for (auto& frame : out) {
    if (frame.rows() != rows || frame.taps() != taps) throw std::invalid_argument("tube_mask: inconsistent frame shapes");
    for (Index c : cells) {
      frame.x[c] = 0.0;
      frame.x[plane + c] = 0.0;
    }
  }
  return out;
}

}  // namespace csiwm
