#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace csiwm {

namespace detail {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
void require_square_finite(const Eigen::MatrixBase<Derived>& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument(std::string(what) + ": matrix must be square, got " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()));
  }
  if (!a.allFinite()) throw std::domain_error(std::string(what) + ": non-finite entry");
}

// Degree-13 Pade numerator/denominator coefficients.
inline constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0, 129060195264000.0,
    10559470521600.0,    670442572800.0,      33522128640.0,      1323241920.0,       40840800.0,
    960960.0,            16380.0,             182.0,              1.0};

// Scaled norm bound for the approximant.
inline constexpr double kExpmScaledNormBound = 0.5;

}  // namespace detail

/// Number of squarings so that the one-norm of A / 2^s is at most 0.5.
template <typename Derived>
int expm_squarings(const Eigen::MatrixBase<Derived>& a) {
  const double norm1 = double(a.cwiseAbs().colwise().sum().maxCoeff());
  if (!(norm1 > detail::kExpmScaledNormBound)) return 0;
  return std::max(0, int(std::ceil(std::log2(norm1 / detail::kExpmScaledNormBound))));
}

/// Matrix exponential by scaling and squaring with a [13/13] Pade approximant.
template <typename Derived>
detail::DenseMatrix<typename Derived::Scalar> expm(const Eigen::MatrixBase<Derived>& a_in) {
  using Scalar = typename Derived::Scalar;
  using Matrix = detail::DenseMatrix<Scalar>;
  detail::require_square_finite(a_in, "expm");
  const Eigen::Index n = a_in.rows();
  if (n == 0) return Matrix(0, 0);
  if (a_in.isZero(0)) return Matrix::Identity(n, n);

  const int s = expm_squarings(a_in);
  const Matrix a = a_in * Scalar(std::ldexp(1.0, -s));
  const auto& b = detail::kPade13;
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;

  Matrix inner = Scalar(b[13]) * a6 + Scalar(b[11]) * a4 + Scalar(b[9]) * a2;
  Matrix u_poly = a6 * inner;
  u_poly += Scalar(b[7]) * a6 + Scalar(b[5]) * a4 + Scalar(b[3]) * a2 + Scalar(b[1]) * ident;
  const Matrix u = a * u_poly;

  inner = Scalar(b[12]) * a6 + Scalar(b[10]) * a4 + Scalar(b[8]) * a2;
  Matrix v = a6 * inner;
  v += Scalar(b[6]) * a6 + Scalar(b[4]) * a4 + Scalar(b[2]) * a2 + Scalar(b[0]) * ident;

  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = (r * r).eval();
  if (!r.allFinite()) throw std::overflow_error("expm: result overflowed");
  return r;
}

/// Directional derivative d/dh expm(A + hE) at h = 0, read from the top-right
/// block of expm([[A, E], [0, A]]).
template <typename DerivedA, typename DerivedE>
detail::DenseMatrix<typename DerivedA::Scalar> expm_frechet(const Eigen::MatrixBase<DerivedA>& a,
                                                            const Eigen::MatrixBase<DerivedE>& e) {
  using Matrix = detail::DenseMatrix<typename DerivedA::Scalar>;
  detail::require_square_finite(a, "expm_frechet");
  if (e.rows() != a.rows() || e.cols() != a.cols()) {
    throw std::invalid_argument("expm_frechet: direction shape does not match A");
  }
  if (!e.allFinite()) throw std::domain_error("expm_frechet: non-finite direction");
  const Eigen::Index n = a.rows();
  // L is linear in E; rescale E to the norm of A so its magnitude does not
  // drive the number of squarings.
  const double e_norm = double(e.cwiseAbs().colwise().sum().maxCoeff());
  if (n == 0 || e_norm == 0.0) return Matrix::Zero(n, n);
  const double a_norm = double(a.cwiseAbs().colwise().sum().maxCoeff());
  const double e_scale = (a_norm > 0.0 ? a_norm : 1.0) / e_norm;
  Matrix block = Matrix::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.topRightCorner(n, n) = e * typename DerivedA::Scalar(e_scale);
  block.bottomRightCorner(n, n) = a;
  return expm(block).topRightCorner(n, n) / typename DerivedA::Scalar(e_scale);
}

}  // namespace csiwm
