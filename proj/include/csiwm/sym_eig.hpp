#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace csiwm {

template <typename Scalar>
struct SymEig {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values;                // descending
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vectors;  // columns
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Iterates until the off-diagonal Frobenius norm drops below 1e-12 relative
/// to max(1, ||S||_F).
template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& s_in) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (s_in.rows() != s_in.cols()) throw std::invalid_argument("sym_eig: matrix must be square");
  if (!s_in.allFinite()) throw std::domain_error("sym_eig: non-finite entry");
  const Eigen::Index n = s_in.rows();
  Matrix s = s_in;
  const Scalar scale = std::max(Scalar(1), s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-9) * scale) {
    throw std::invalid_argument("sym_eig: matrix is not symmetric");
  }
  s = Scalar(0.5) * (s + s.transpose()).eval();
  Matrix v = Matrix::Identity(n, n);

  const Scalar stop = Scalar(1e-12) * std::max(Scalar(1), s.norm());
  auto off_norm = [&] {
    Scalar acc = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) acc += s(i, j) * s(i, j);
    return std::sqrt(acc);
  };

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps && off_norm() >= stop; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = s(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar theta = (s(q, q) - s(p, p)) / (Scalar(2) * apq);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar skp = s(k, p);
          const Scalar skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar spk = s(p, k);
          const Scalar sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p);
          const Scalar vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return s(a, a) > s(b, b); });
  SymEig<Scalar> out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values[i] = s(order[std::size_t(i)], order[std::size_t(i)]);
    out.vectors.col(i) = v.col(order[std::size_t(i)]);
  }
  return out;
}

}  // namespace csiwm
